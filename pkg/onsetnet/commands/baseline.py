import numpy as np
import pandas as pd

from onsetnet.core.seeding import substream
from onsetnet.deps import load_dataset, output_dir, require_data, require_subject, write_run_manifest
from onsetnet.errors import StorageError
from onsetnet.evaluation.matching import informed_random_baseline

SEED_MASK = 2 ** 64 - 1


def register(subparsers):
    parser = subparsers.add_parser("baseline", help="正解のオンセット数を知るランダム推定の f 値")
    parser.add_argument("--subject", help="対象の被験者 (eval.subject、省略時は全員)")
    parser.add_argument("--trials", type=int, help="eval.baseline_trials を上書きする")
    parser.add_argument("--spread", type=int, help="N 個のシードで 1 試行と既定の試行数のばらつきを比べる (eval.baseline_spread)")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args):
    return {
        "eval.subject": args.subject,
        "eval.baseline_trials": args.trials,
        "eval.baseline_spread": args.spread,
    }


def mean_baseline(records, trials: int, seed: int, tolerance: float) -> float:
    scores = [
        informed_random_baseline(
            record.annotations.onsets, record.annotations.duration_sec, trials,
            substream(seed, "baseline", record.video_id), tolerance,
        )
        for record in records
    ]
    return float(np.mean(scores))


def run(args, config, env) -> int:
    dataset = load_dataset(config)
    subject, spread = config.eval.subject, config.eval.baseline_spread
    subjects = [require_subject(dataset, subject)] if subject else dataset.subjects
    trials, tolerance = config.eval.baseline_trials, config.eval.tolerance
    out_dir = output_dir(config, "baseline")
    write_run_manifest(out_dir, "baseline", config, {"dataset": require_data(config)})

    rows = []
    records = [record for name in subjects for record in dataset.videos_of(name)]
    for record in records:
        rows.append({
            "subject": record.subject_id,
            "video_id": record.video_id,
            "onsets": len(record.annotations.onsets),
            "f": mean_baseline([record], trials, config.seed, tolerance),
        })
    table = pd.DataFrame(rows, columns=["subject", "video_id", "onsets", "f"])
    print(table.to_string(index=False, float_format=lambda v: f"{100.0 * v:.1f}"))
    print(f"mean f over {len(records)} videos ({trials} trials): {100.0 * table['f'].mean():.1f}")
    try:
        table.to_csv(out_dir / "baseline.csv", index=False, float_format="%.6f")
    except OSError as exc:
        raise StorageError(f"cannot write {out_dir / 'baseline.csv'}: {exc}") from exc

    if spread > 0:
        seeds = [(config.seed + offset) & SEED_MASK for offset in range(spread)]
        single = [mean_baseline(records, 1, seed, tolerance) for seed in seeds]
        repeated = [mean_baseline(records, trials, seed, tolerance) for seed in seeds]
        print(
            f"spread over {spread} seeds: 1 trial sd {100.0 * np.std(single):.2f}, "
            f"{trials} trials sd {100.0 * np.std(repeated):.2f}"
        )
    return 0
