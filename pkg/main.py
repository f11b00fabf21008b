import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from talk_core.errors import CheckpointError, ConfigurationError, BlobTalkError, NumericFailure
from talk_core.graph import run_ablation
from talk_core.pipeline import evaluate, gen_data, reproduce, sample, sample_long, train, verify_manifest
from talk_core.settings import DEFAULT_ABLATION_MATRIX, RunConfig, load_config

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def banner(title: str, subtitle: Optional[str] = None) -> None:
    print("\n" + "="*60)
    print(f"   {title}")
    if subtitle:
        print(f"   {subtitle}")
    print("="*60)


def _flag_list(value: Optional[str]) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="TOML run config (defaults: ./blob_talk.toml, BLOBTALK_* env)")
    common.add_argument('--seed', type=int, help="Seed for the world, weight init, training and sampling")
    common.add_argument('--out', help="Output path (directory, checkpoint or report, per command)")
    common.add_argument('--frames', type=int, help="Frames per clip (sample-long: total frames)")
    common.add_argument('--fusion', choices=['on', 'off'], help="Progressive fusion for long clips")
    common.add_argument('--segment-len', type=int, help="Frames per fusion window")
    common.add_argument('--overlap', type=int, help="Frames shared by consecutive windows")
    common.add_argument('--ablate', help="Comma-separated ablation flags (ablate: cells to run)")
    common.add_argument('--fast', action='store_true', help="CI schedule: T=200, 20 sampling steps")
    common.add_argument('--debug', action='store_true', help="Per-op finiteness checks and debug logging")

    parser = argparse.ArgumentParser(
        description='Blob Talk: identity-preserving talking-blob video diffusion'
    )
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('gen-data', parents=[common], help="Build and persist the synthetic dataset")

    p = commands.add_parser('train', parents=[common], help="Train ReferenceNet and AnimateNet jointly")
    p.add_argument('--data', required=True, help="Dataset directory from gen-data")
    p.add_argument('--resume', help="Checkpoint to resume from")

    for name in ('sample', 'sample-long'):
        p = commands.add_parser(name, parents=[common], help="Generate a clip from a checkpoint")
        p.add_argument('--checkpoint', required=True, help="Checkpoint from train")
        p.add_argument('--prompt', default='red,small', help="Comma-separated attribute tokens")
        p.add_argument('--reference', help="Reference PNG replacing the rendered reference frame")
        p.add_argument('--signal-seed', type=int, default=0, help="Drive signal seed")
        p.add_argument('--gif', action='store_true', help="Also write an animated GIF")

    p = commands.add_parser('eval', parents=[common], help="Evaluate a checkpoint on held-out clips")
    p.add_argument('--checkpoint', required=True, help="Checkpoint from train")

    p = commands.add_parser('ablate', parents=[common], help="Train and evaluate the ablation matrix")
    p.add_argument('--data', help="Shared dataset directory (generated when missing)")

    p = commands.add_parser('verify', help="Recheck or regenerate an artifact from its manifest")
    p.add_argument('manifest', help="manifest.json or run_manifest.json")
    p.add_argument('--reproduce', help="Regenerate into this directory and compare bytes")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {}
    if args.frames is not None and args.command not in ('sample', 'sample-long'):
        overrides['world'] = {'frames': args.frames}
        overrides['unet'] = {'frames': args.frames}
    fusion: Dict[str, Any] = {}
    if args.fusion is not None:
        fusion['enabled'] = args.fusion == 'on'
    if args.segment_len is not None:
        fusion['segment_length'] = args.segment_len
    if args.overlap is not None:
        fusion['overlap'] = args.overlap
    if fusion:
        overrides['fusion'] = fusion
    if args.fast:
        overrides['fast'] = True
    if args.debug:
        overrides['debug'] = True

    config = load_config(args.config, overrides)
    if args.ablate and args.command != 'ablate':
        config = config.with_ablation(_flag_list(args.ablate))
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def run(args: argparse.Namespace) -> int:
    if args.command == 'verify':
        banner("MANIFEST CHECK", args.manifest)
        if args.reproduce:
            result = reproduce(args.manifest, args.reproduce)
            print(f"  Identical: {result['identical']}")
            ok = result['identical']
        else:
            result = verify_manifest(args.manifest)
            print(f"  Config hash ok: {result['config_hash_ok']}")
            ok = result['ok']
        for name in result['mismatched_files']:
            print(f"  - mismatch: {name}")
        return EXIT_OK if ok else EXIT_ERROR

    config = config_from_args(args)
    banner("BLOB TALK", f"{args.command} | config {config.config_hash()}")

    if args.command == 'gen-data':
        out = Path(args.out or 'results/data')
        manifest = gen_data(config, out)
        print(f" ---> {manifest.n_clips} clips of {manifest.frames} frames")
        print(f" ---> Dataset hash: {manifest.dataset_hash()}")
        print(f" ---> Saved to: {out}")

    elif args.command == 'train':
        out = Path(args.out or 'results/checkpoint.mtkb')
        result = train(config, args.data, out, resume=args.resume)
        if result['losses']:
            print(f" ---> Loss: {result['losses'][0]:.4f} -> {result['losses'][-1]:.4f}")
        print(f" ---> Step {result['steps']}, checkpoint: {result['checkpoint']}")
        print(f" ---> Loss curve: {result['loss_csv']}")

    elif args.command in ('sample', 'sample-long'):
        out = Path(args.out or f"results/{args.command}")
        tokens = _flag_list(args.prompt)
        if args.command == 'sample':
            manifest = sample(
                config, args.checkpoint, out, tokens, args.signal_seed, args.frames, args.reference, args.gif
            )
        else:
            manifest = sample_long(
                config, args.checkpoint, out, args.frames or 48, tokens, args.signal_seed,
                reference=args.reference, gif=args.gif,
            )
            print(f" ---> Fusion: {'on' if manifest.fusion else 'off'}")
        print(f" ---> {len(manifest.files)} frames saved to: {out}")

    elif args.command == 'eval':
        out = Path(args.out or 'results/report.json')
        report = evaluate(config, args.checkpoint, out)
        print(report.to_text())
        print(f" ---> Report saved to: {out}")

    elif args.command == 'ablate':
        out = Path(args.out or 'results/ablation')
        cells = _flag_list(args.ablate) or list(DEFAULT_ABLATION_MATRIX)
        table = run_ablation(config, out, args.data, cells)
        print(table.to_text())

    print("="*60 + "\n")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, 'debug', False) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except (ConfigurationError, CheckpointError, ValidationError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except BlobTalkError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
