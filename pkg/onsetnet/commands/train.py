from onsetnet.data.splits import LOSO_SUBJECTS, make_splits
from onsetnet.deps import load_dataset, output_dir, require_data, write_run_manifest
from onsetnet.training.trainer import fit


def register(subparsers):
    parser = subparsers.add_parser("train", help="1 つの LOSO 分割で学習する")
    parser.add_argument("--split", type=int, choices=range(LOSO_SUBJECTS), help="train.split を上書きする (0-8)")
    parser.add_argument("--max-epochs", type=int, help="train.max_epochs を上書きする")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args):
    return {"train.split": args.split, "train.max_epochs": args.max_epochs}


def run(args, config, env) -> int:
    """分割の学習被験者で学習し、履歴とチェックポイントを split_<n>/ に書き出す"""
    split_id = config.train.split
    dataset = load_dataset(config)
    plan = make_splits(dataset.subjects)[split_id]
    out_dir = output_dir(config, f"split_{split_id}")
    write_run_manifest(out_dir, "train", config, {"dataset": require_data(config)})
    result = fit(dataset, plan, config, out_dir, threads=env.threads)
    for record in result.history:
        print(
            f"epoch {record.epoch}: train loss {record.train_loss:.4f} val loss {record.val_loss:.4f} "
            f"P {record.val_precision:.3f} R {record.val_recall:.3f} F {record.val_f:.3f}"
        )
    print(f"best epoch {result.best_epoch} (validation f {result.best_f:.3f}): {result.best_checkpoint}")
    return 0
