from onsetnet.data.splits import make_splits
from onsetnet.deps import load_dataset


def register(subparsers):
    parser = subparsers.add_parser("splits", help="LOSO の 9 分割を表示する")
    parser.set_defaults(handler=run)


def run(args, config, env) -> int:
    for plan in make_splits(load_dataset(config).subjects):
        print(
            f"split {plan.split_id}: test {plan.test_subject}, validation {plan.validation_subject}, "
            f"train {','.join(plan.train_subjects)}"
        )
    return 0
