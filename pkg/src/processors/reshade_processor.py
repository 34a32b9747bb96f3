"""
Processador do reshading por Deep Image Prior e do benchmark de ruído em lote
"""

from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Tuple

from loguru import logger

from checkpoints import read_key_values
from config import PipelineConfig
from dip import AuxiliaryModels, ReshadeJob, benchmark_batched_noise, prepare_job, reshade_prepared
from errors import ConfigError
from imaging import Placement
from report import write_benchmark_csv, write_manifest, write_reshade_outputs
from .base_processor import BaseProcessor

RESHADE = "reshade"
BENCHMARK_DIP = "benchmark-dip"

JOB_KEYS = ("source", "mask", "target", "dx", "dy", "scale")
DEFAULT_B_VALUES = (1, 2, 4)


class ReshadeProcessor(BaseProcessor):
    """Insere o objeto da fonte no alvo regenerando apenas o shading do fragmento"""

    def job_from_manifest(self, path: Path) -> Tuple[Dict[str, Any], PipelineConfig]:
        """Parâmetros do job e configuração gravados por uma execução anterior"""
        values = read_key_values(Path(path))
        missing = [k for k in JOB_KEYS if f"JOB_{k.upper()}" not in values]
        if missing:
            raise ConfigError(f"Manifesto {path} sem as chaves: {', '.join(missing)}")
        job = {k: values[f"JOB_{k.upper()}"] for k in JOB_KEYS}
        pipeline = PipelineConfig.from_flat_dict(values)
        # Checkpoints resolvidos na execução original valem mais que o cache atual
        recorded = {
            name: values[f"CHECKPOINT_{name.upper()}"]
            for name in ("decomposition", "discriminator", "features")
            if values.get(f"CHECKPOINT_{name.upper()}")
        }
        pipeline = replace(pipeline, paths=replace(pipeline.paths, **recorded))
        if values.get("CHECKPOINT_NORMALS"):
            pipeline = replace(pipeline, normals=replace(pipeline.normals, checkpoint=values["CHECKPOINT_NORMALS"]))
        return job, pipeline

    def build_job(self, task: Dict[str, Any], pipeline: PipelineConfig) -> ReshadeJob:
        for key in ("source", "mask", "target"):
            if not task.get(key):
                raise ConfigError(f"Parâmetro obrigatório ausente: --{key}")
        models = AuxiliaryModels.from_checkpoints(pipeline, self.config, self.device)
        return ReshadeJob(
            source=self.load_input_image(Path(task["source"])),
            source_mask=self.load_input_mask(Path(task["mask"])),
            target=self.load_input_image(Path(task["target"])),
            placement=Placement(
                dx=int(task.get("dx") or 0),
                dy=int(task.get("dy") or 0),
                scale=float(task.get("scale") or 1.0),
            ),
            models=models,
        )

    def manifest_values(self, task: Dict[str, Any], pipeline: PipelineConfig) -> Dict[str, Any]:
        values: Dict[str, Any] = {
            "job_source": str(Path(task["source"]).resolve()),
            "job_mask": str(Path(task["mask"]).resolve()),
            "job_target": str(Path(task["target"]).resolve()),
            "job_dx": int(task.get("dx") or 0),
            "job_dy": int(task.get("dy") or 0),
            "job_scale": float(task.get("scale") or 1.0),
        }
        for name in ("decomposition", "discriminator", "features", "normals"):
            values[f"checkpoint_{name}"] = str(pipeline.checkpoint_path(name, self.config))
        values.update(pipeline.to_flat_dict())
        return values

    def resolve(self, task: Dict[str, Any]) -> Tuple[Dict[str, Any], PipelineConfig]:
        if task.get("manifest"):
            job, pipeline = self.job_from_manifest(Path(task["manifest"]))
            logger.info(f"🔁 Reexecutando a partir do manifesto {task['manifest']}")
            return {**task, **job}, pipeline
        return task, self.pipeline

    async def reshade(self, task: Dict[str, Any]) -> Dict[str, Any]:
        task, pipeline = self.resolve(task)
        out_dir = Path(task.get("out_dir") or Path(pipeline.paths.output_dir) / "reshade")
        job = await self.run_blocking(self.build_job, task, pipeline)
        prepared = await self.run_blocking(prepare_job, job)
        result = await self.run_blocking(reshade_prepared, prepared, job.models, pipeline.dip, self.device)

        outputs = write_reshade_outputs(result, out_dir)
        outputs["manifest"] = write_manifest(out_dir, self.manifest_values(task, pipeline))
        checks = result.check_invariants()
        for name, ok in checks.items():
            if not ok:
                logger.warning(f"⚠️ Verificação '{name}' falhou")
        return {
            "out_dir": str(out_dir),
            "best_iteration": result.best_iteration,
            "best_total": result.best_total,
            "result": result,
            "outputs": outputs,
            "checks": checks,
        }

    async def benchmark(self, task: Dict[str, Any]) -> Dict[str, Any]:
        task, pipeline = self.resolve(task)
        out_dir = Path(task.get("out_dir") or Path(pipeline.paths.output_dir) / "benchmark")
        b_values = [int(b) for b in (task.get("b_values") or DEFAULT_B_VALUES)]
        time_budget = task.get("time_budget")
        config = pipeline.dip
        if task.get("iterations"):
            config = replace(config, iterations=int(task["iterations"]))

        job = await self.run_blocking(self.build_job, task, pipeline)
        prepared = await self.run_blocking(prepare_job, job)
        rows = await self.run_blocking(
            benchmark_batched_noise,
            job,
            config,
            b_values,
            None if time_budget is None else float(time_budget),
            self.device,
            prepared,
        )
        csv_path = write_benchmark_csv(out_dir / "benchmark.csv", rows)
        best = max(rows, key=lambda r: r.speedup)
        return {"out_dir": str(out_dir), "benchmark": str(csv_path), "rows": rows, "max_speedup": best.speedup}

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        try:
            action = task.get("action", RESHADE)
            if action == BENCHMARK_DIP:
                result = await self.benchmark(task)
            else:
                result = await self.reshade(task)
            self.log_result(action, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro no reshading: {e}")
            raise
