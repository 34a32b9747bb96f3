import pytest

from config import DIPConfig, DiscriminatorTrainConfig, NormalsConfig, PipelineConfig, TrainConfig
from errors import ConfigError
from main import apply_overrides, build_parser, build_task


def _write(tmp_path, text):
    path = tmp_path / "pipeline.toml"
    path.write_text(text)
    return path


def test_env_config(env, tmp_path):
    assert env.torch_device == "cpu"
    assert env.cache_dir == tmp_path / "cache"
    assert env.max_image_size_bytes == 20 * 1024 * 1024


def test_load_toml_keeps_section_defaults(tmp_path):
    pipeline = PipelineConfig.load(_write(tmp_path, """
seed = 5

[dip]
iterations = 10
loss_weights = [1.0, 0.5, 0.0]

[decomposition]
epochs = 3
"""))
    assert pipeline.dip.iterations == 10
    assert pipeline.dip.loss_weights == (1.0, 0.5, 0.0)
    assert pipeline.decomposition.epochs == 3
    assert pipeline.decomposition.dataset_dir == "data/decomposition"
    assert pipeline.features.epochs == 5


def test_global_seed_propagates(tmp_path):
    pipeline = PipelineConfig.load(_write(tmp_path, "seed = 9\n\n[discriminator]\nseed = 2\n"))
    assert pipeline.dip.seed == 9
    assert pipeline.decomposition.seed == 9
    assert pipeline.discriminator.seed == 2


def test_missing_path_gives_defaults():
    assert PipelineConfig.load(None) == PipelineConfig()


@pytest.mark.parametrize("text", [
    "colour = 1\n",
    "[dip]\nsteps = 10\n",
    "dip = 3\n",
    "[dip]\niterations = 0\n",
    "[normals]\nbackend = \"midas\"\n",
    "seed = \n",
])
def test_invalid_toml_is_config_error(tmp_path, text):
    with pytest.raises(ConfigError):
        PipelineConfig.load(_write(tmp_path, text))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.toml")


def test_section_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ConfigError):
        DiscriminatorTrainConfig(cutmix_probability=2.0)
    with pytest.raises(ConfigError):
        DIPConfig(loss_weights=(1.0, -1.0, 0.0))
    with pytest.raises(ConfigError):
        DIPConfig(noise_batch=0)
    with pytest.raises(ConfigError):
        NormalsConfig(backend="zoe")


def test_flat_dict_round_trip():
    pipeline = PipelineConfig(seed=3, dip=DIPConfig(iterations=42, loss_weights=(1.0, 0.25, 0.0), pixel_map_loss=True))
    flat = pipeline.to_flat_dict()
    assert flat["DIP_ITERATIONS"] == "42"
    assert flat["DIP_LOSS_WEIGHTS"] == "1.0,0.25,0.0"
    assert PipelineConfig.from_flat_dict(flat) == pipeline


def test_from_flat_dict_ignores_unknown_and_fills_defaults():
    pipeline = PipelineConfig.from_flat_dict({"DIP_NOISE_BATCH": "4", "CHECKPOINT_DECOMPOSITION": "/tmp/x.pt"})
    assert pipeline.dip.noise_batch == 4
    assert pipeline.dip.iterations == DIPConfig().iterations


def test_from_flat_dict_rejects_bad_values():
    with pytest.raises(ConfigError):
        PipelineConfig.from_flat_dict({"DIP_ITERATIONS": "many"})


def test_checkpoint_path(env, tmp_path):
    pipeline = PipelineConfig()
    assert pipeline.checkpoint_path("decomposition", env) == tmp_path / "cache" / "decomposition.pt"
    assert pipeline.checkpoint_path("normals", env) == tmp_path / "cache" / "normals.ts"
    configured = PipelineConfig(normals=NormalsConfig(backend="pretrained", checkpoint="weights/n.ts"))
    assert str(configured.checkpoint_path("normals", env)) == "weights/n.ts"


def test_cli_flags_override_file():
    args = build_parser().parse_args(
        ["reshade", "--iterations", "7", "--weights", "1", "0", "0", "--noise-batch", "2", "--seed", "11"]
    )
    pipeline = apply_overrides(PipelineConfig(), args)
    assert pipeline.dip.iterations == 7
    assert pipeline.dip.loss_weights == (1.0, 0.0, 0.0)
    assert pipeline.dip.noise_batch == 2
    assert pipeline.seed == 11
    assert pipeline.dip.seed == 11 and pipeline.features.seed == 11


def test_training_flags_land_in_their_section():
    args = build_parser().parse_args(["train-discriminator", "--epochs", "2", "--cutmix", "0.3", "--shading-only"])
    pipeline = apply_overrides(PipelineConfig(), args)
    assert pipeline.discriminator.epochs == 2
    assert pipeline.discriminator.cutmix_probability == 0.3
    assert pipeline.discriminator.shading_only
    assert pipeline.decomposition.epochs == PipelineConfig().decomposition.epochs


def test_build_task_drops_unset_flags():
    args = build_parser().parse_args(["decompose", "--image", "a.png", "--out-albedo", "b.png", "--out-shading", "c.png"])
    task = build_task(args)
    assert task["action"] == "decompose"
    assert "ckpt" not in task and "config" not in task
