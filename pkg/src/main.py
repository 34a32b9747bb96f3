#!/usr/bin/env python3
"""
Reshade Pipeline
Inserção de objetos com reshading por Deep Image Prior: geração de dados, treino dos
modelos auxiliares, reshading, benchmark, validação e demo ponta a ponta
"""

import argparse
import asyncio
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from config import Config, PipelineConfig
from corpus import CORPUS_KINDS
from errors import EXIT_OK, EXIT_USAGE, ReshadeError, ValidationError
from pipeline import DEMO, VALIDATE, PipelineClient

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"

# Subcomando → seção do TOML que recebe as flags de mesmo nome
SECTIONS = {
    "gen-data": "data",
    "train-decomposition": "decomposition",
    "train-discriminator": "discriminator",
    "finetune-features": "features",
    "reshade": "dip",
    "benchmark-dip": "dip",
    "demo": "dip",
}


class UsageArgumentParser(argparse.ArgumentParser):
    """Erros de uso saem com código 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: erro: {message}\n")


def configure_logging(config: Config) -> None:
    logger.remove()
    logger.add(sys.stderr, level=config.log_level, format=LOG_FORMAT)
    if config.log_file:
        logger.add(config.log_file, level=config.log_level, rotation="10 MB", retention=5)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Arquivo TOML do pipeline")
    parser.add_argument("--seed", type=int, help="Seed global (sobrepõe a de todas as etapas)")


def _training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", dest="dataset_dir", help="Diretório do dataset")
    parser.add_argument("--out", help="Checkpoint de saída")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)


def _job(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--source", type=Path, help="Imagem fonte (PNG)")
    parser.add_argument("--mask", type=Path, help="Máscara do objeto na fonte (PNG)")
    parser.add_argument("--target", type=Path, help="Imagem alvo (PNG)")
    parser.add_argument("--dx", type=int)
    parser.add_argument("--dy", type=int)
    parser.add_argument("--scale", type=float)
    parser.add_argument("--out-dir", dest="out_dir", type=Path)
    parser.add_argument("--manifest", type=Path, help="Reexecuta o job gravado em um manifest.env")
    _dip(parser)


def _dip(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--noise-batch", dest="noise_batch", type=int)
    parser.add_argument("--weights", dest="loss_weights", type=float, nargs=3, metavar=("W_S", "W_N", "W_F"))
    parser.add_argument("--tv-weight", dest="tv_weight", type=float)
    parser.add_argument("--dip-lr", dest="learning_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageArgumentParser(prog="reshade", description="Pipeline de reshading de objetos inseridos")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Gera um dataset sintético")
    _common(p)
    p.add_argument("--kind", choices=CORPUS_KINDS, default="decomposition")
    p.add_argument("--count", type=int)
    p.add_argument("--out-dir", dest="out_dir", type=Path)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-patches", dest="n_patches", type=int)
    p.add_argument("--perlin-freq", dest="perlin_frequency", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--landscapes", help="Fotos de paisagem para os shadings limpos")
    p.add_argument("--decomposition-ckpt", dest="decomposition_ckpt")

    p = sub.add_parser("train-decomposition", help="Treina a Albedo-Shading Net")
    _common(p)
    _training(p)
    p.add_argument("--held-out", dest="held_out", type=int, help="Amostras sintéticas de avaliação")

    p = sub.add_parser("decompose", help="Decompõe uma imagem em albedo e shading")
    _common(p)
    p.add_argument("--ckpt")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out-albedo", dest="out_albedo", type=Path, required=True)
    p.add_argument("--out-shading", dest="out_shading", type=Path, required=True)

    p = sub.add_parser("train-discriminator", help="Treina o discriminador normal-shading")
    _common(p)
    _training(p)
    p.add_argument("--shading-only", dest="shading_only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cutmix", dest="cutmix_probability", type=float)

    p = sub.add_parser("finetune-features", help="Ajusta as features robustas à iluminação")
    _common(p)
    _training(p)
    p.add_argument("--consistency-weight", dest="consistency_weight", type=float)
    p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--compare-baseline", dest="compare_baseline", action="store_true", default=None)

    p = sub.add_parser("estimate-normals", help="Estima o campo de normais de uma imagem")
    _common(p)
    p.add_argument("--backend", choices=("pretrained", "synthetic"))
    p.add_argument("--ckpt")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("reshade", help="Insere o objeto e regenera seu shading")
    _common(p)
    _job(p)

    p = sub.add_parser("benchmark-dip", help="Compara tamanhos de lote do ruído")
    _common(p)
    _job(p)
    p.add_argument("--b-values", dest="b_values", type=int, nargs="+")
    p.add_argument("--time-budget", dest="time_budget", type=float, help="Segundos por valor de B")

    p = sub.add_parser(VALIDATE, help="Valida checkpoints e datasets")
    _common(p)

    p = sub.add_parser(DEMO, help="Demo sintética ponta a ponta com relatório")
    _common(p)
    p.add_argument("--out-dir", dest="out_dir", type=Path)
    p.add_argument("--train-missing", dest="train_missing", action="store_true")
    p.add_argument("--benchmark", action="store_true")
    _dip(p)
    return parser


def apply_overrides(pipeline: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    """Flags da linha de comando vencem os valores do arquivo"""
    if args.seed is not None:
        stages = {name: replace(getattr(pipeline, name), seed=args.seed) for name in ("decomposition", "discriminator", "features", "dip")}
        pipeline = replace(pipeline, seed=args.seed, **stages)

    section_name = SECTIONS.get(args.command)
    if section_name:
        section = getattr(pipeline, section_name)
        values = {f.name: getattr(args, f.name) for f in fields(section) if getattr(args, f.name, None) is not None}
        if values:
            pipeline = replace(pipeline, **{section_name: replace(section, **values)})
    return pipeline


def build_task(args: argparse.Namespace) -> Dict[str, Any]:
    task = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    task["action"] = args.command
    return task


def run(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    config = Config()
    configure_logging(config)
    logger.info(f"🚀 Iniciando reshade: {args.command}")
    logger.debug(f"💾 Cache de checkpoints: {config.cache_dir}")
    logger.debug(f"🖥️ Dispositivo: {config.torch_device} (CUDA_VISIBLE_DEVICES={config.cuda_visible_devices})")

    try:
        pipeline = apply_overrides(PipelineConfig.load(args.config), args)
        client = PipelineClient(config, pipeline)

        if args.command == VALIDATE:
            checks = client.validate_artifacts()
            failed = [c.name for c in checks if not c.ok]
            if failed:
                raise ValidationError(f"Validação falhou: {', '.join(failed)}")
            logger.info("✅ Todos os artefatos válidos")
            return EXIT_OK

        if args.command == DEMO:
            out_dir = args.out_dir or Path(pipeline.paths.output_dir) / "demo"
            result = asyncio.run(client.run_end_to_end(out_dir, args.train_missing, args.benchmark))
            logger.info(f"✅ Demo concluída: {result['report']}")
            return EXIT_OK

        asyncio.run(client.run(build_task(args)))
        return EXIT_OK

    except ReshadeError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("⏹️ Interrompido pelo usuário")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(run())
