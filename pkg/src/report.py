"""
Saídas do reshading: imagens, curvas de perda, manifesto e relatório markdown
"""

import csv
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import cv2
import numpy as np
from loguru import logger

from checkpoints import write_key_values
from dip import REFERENCE_SPEEDUP, BenchmarkRow, LossRecord, ReshadeResult
from image_io import save_image, save_shading16

CURVE_COLORS = {
    "l_s": (200, 60, 40),
    "l_n": (40, 140, 40),
    "l_f": (40, 80, 200),
    "total": (30, 30, 30),
}


def write_losses_csv(path: Path, history: Sequence[LossRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "L_s", "L_n", "L_f", "total"])
        for r in history:
            writer.writerow([r.iteration, f"{r.l_s:.8g}", f"{r.l_n:.8g}", f"{r.l_f:.8g}", f"{r.total:.8g}"])
    return path


def write_benchmark_csv(path: Path, rows: Sequence[BenchmarkRow]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["noise_batch", "iterations", "seconds", "iterations_per_second",
             "initial_loss", "best_loss", "loss_decrease_rate", "speedup", "reference_speedup"]
        )
        for r in rows:
            writer.writerow([
                r.noise_batch, r.iterations, f"{r.seconds:.4f}", f"{r.iterations_per_second:.4f}",
                f"{r.initial_loss:.8g}", f"{r.best_loss:.8g}", f"{r.loss_decrease_rate:.8g}",
                f"{r.speedup:.4f}", REFERENCE_SPEEDUP,
            ])
    return path


def draw_loss_curve(path: Path, history: Sequence[LossRecord], width: int = 720, height: int = 360) -> Path:
    """Curvas log10 de cada componente, desenhadas com OpenCV"""
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    margin = 40
    cv2.rectangle(canvas, (margin, margin // 2), (width - margin // 2, height - margin), (180, 180, 180), 1)
    if history:
        series = {
            name: np.log10(np.maximum([getattr(r, name) for r in history], 1e-8))
            for name in CURVE_COLORS
        }
        lo = min(float(v.min()) for v in series.values())
        hi = max(float(v.max()) for v in series.values())
        span = max(hi - lo, 1e-6)
        n = max(len(history) - 1, 1)
        for row, (name, values) in enumerate(series.items()):
            xs = margin + np.arange(len(values)) / n * (width - 1.5 * margin)
            ys = (height - margin) - (values - lo) / span * (height - 1.5 * margin)
            points = np.stack([xs, ys], axis=-1).round().astype(np.int32).reshape(-1, 1, 2)
            color = CURVE_COLORS[name]
            cv2.polylines(canvas, [points], isClosed=False, color=color, thickness=1, lineType=cv2.LINE_AA)
            cv2.putText(canvas, name, (width - 110, 30 + 18 * row), cv2.FONT_HERSHEY_SIMPLEX, 0.5, color, 1, cv2.LINE_AA)
        cv2.putText(canvas, f"log10 [{lo:.2f}, {hi:.2f}]", (margin, height - 12),
                    cv2.FONT_HERSHEY_SIMPLEX, 0.45, (80, 80, 80), 1, cv2.LINE_AA)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(canvas, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Falha ao gravar {path}")
    return path


def write_reshade_outputs(result: ReshadeResult, out_dir: Path) -> Dict[str, Path]:
    """Y.png, S_star.png (16-bit), albedo_y.png, shading_y.png (16-bit), naive.png e losses.csv"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "output": out_dir / "Y.png",
        "generated_shading": out_dir / "S_star.png",
        "composite_albedo": out_dir / "albedo_y.png",
        "composite_shading": out_dir / "shading_y.png",
        "naive_composite": out_dir / "naive.png",
        "losses": out_dir / "losses.csv",
        "loss_curve": out_dir / "loss_curve.png",
    }
    save_image(paths["output"], result.output)
    save_shading16(paths["generated_shading"], result.generated_shading)
    save_image(paths["composite_albedo"], result.composite_albedo)
    save_shading16(paths["composite_shading"], result.composite_shading)
    save_image(paths["naive_composite"], result.naive_composite)
    write_losses_csv(paths["losses"], result.loss_history)
    draw_loss_curve(paths["loss_curve"], result.loss_history)
    if result.pixel_map is not None:
        paths["pixel_map"] = out_dir / "realness_map.png"
        save_shading16(paths["pixel_map"], result.pixel_map)
    logger.info(f"💾 Saídas do reshading em {out_dir}")
    return paths


def write_manifest(out_dir: Path, values: Dict[str, object]) -> Path:
    path = Path(out_dir) / "manifest.env"
    write_key_values(path, values)
    return path


def _check_mark(ok: bool) -> str:
    return "✅" if ok else "❌"


def write_report(
    out_dir: Path,
    result: ReshadeResult,
    inputs: Dict[str, Path],
    outputs: Dict[str, Path],
    checks: Dict[str, bool],
    benchmark: Optional[List[BenchmarkRow]] = None,
    extra: Optional[Dict[str, float]] = None,
) -> Path:
    """Relatório markdown com entradas, composição ingênua C, saída Y, curvas e verificações"""
    out_dir = Path(out_dir)

    def rel(p: Path) -> str:
        return Path(os.path.relpath(p, out_dir)).as_posix()

    final = result.loss_history[result.best_iteration]
    lines = [
        "# Relatório de reshading",
        "",
        "## Entradas",
        "",
        *[f"- {name}: ![{name}]({rel(p)})" for name, p in inputs.items()],
        "",
        "## Resultado",
        "",
        "| Composição ingênua C | Saída Y | Shading S* |",
        "|---|---|---|",
        f"| ![C]({rel(outputs['naive_composite'])}) | ![Y]({rel(outputs['output'])}) "
        f"| ![S*]({rel(outputs['generated_shading'])}) |",
        "",
        f"Melhor iteração: {result.best_iteration} de {len(result.loss_history)}",
        "",
        "| L_s | L_n | L_f | total |",
        "|---|---|---|---|",
        f"| {final.l_s:.6g} | {final.l_n:.6g} | {final.l_f:.6g} | {final.total:.6g} |",
        "",
        "## Curvas de perda",
        "",
        f"![perdas]({rel(outputs['loss_curve'])})",
        "",
        "## Verificações",
        "",
        "| verificação | resultado |",
        "|---|---|",
        *[f"| {name} | {_check_mark(ok)} |" for name, ok in checks.items()],
    ]
    if extra:
        lines += ["", "## Métricas", "", "| métrica | valor |", "|---|---|"]
        lines += [f"| {name} | {value:.6g} |" for name, value in extra.items()]
    if benchmark:
        lines += [
            "",
            "## Ruído em lote",
            "",
            f"Ganho de referência com B = 4: {REFERENCE_SPEEDUP:.1f}x",
            "",
            "| B | it/s | perda inicial | melhor perda | queda/s | ganho |",
            "|---|---|---|---|---|---|",
        ]
        lines += [
            f"| {r.noise_batch} | {r.iterations_per_second:.2f} | {r.initial_loss:.6g} | {r.best_loss:.6g} "
            f"| {r.loss_decrease_rate:.6g} | {r.speedup:.2f}x |"
            for r in benchmark
        ]
    path = out_dir / "report.md"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"📝 Relatório gravado em {path}")
    return path
