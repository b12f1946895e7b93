from pathlib import Path

from onsetnet.data.annotations import dataset_summary, load_annotations
from onsetnet.data.synth import generate_synthetic
from onsetnet.deps import write_run_manifest


def register(subparsers):
    parser = subparsers.add_parser("synth", help="合成データセットを --out に書き出す")
    parser.set_defaults(handler=run)


def run(args, config, env) -> int:
    """合成データセットを生成し、その概要を表示する"""
    out_dir = Path(config.paths.out)
    write_run_manifest(out_dir, "synth", config)
    manifest = generate_synthetic(config.synth, config.seed, out_dir)
    summary = dataset_summary(load_annotations(manifest, config.model.roi_names))
    print(f"manifest: {manifest}")
    print(
        f"subjects {summary['subjects']}, videos {summary['videos']}, onsets {summary['onsets']}, "
        f"frames {summary['frames']}, one onset every {summary['frames_per_onset']:.1f} frames"
    )
    return 0
