import pytest
import torch

from priorrg.config import RunConfig, settings
from priorrg.corpus.dataset import Corpus, collate_studies, StudyDataset
from priorrg.corpus.generator import MissingnessProfile, generate_corpus

# Toy dimensions: 16x16 images in 8x8 patches give a 2x2 grid (s=4)
TOY = dict(
    seed=7,
    n_patients=12,
    visits_per_patient=3,
    image_size=16,
    patch_size=8,
    d=8,
    d_enc=8,
    heads=2,
    ffn_mult=2,
    vision_layers=2,
    text_layers=1,
    stf_blocks=1,
    n_latents=4,
    perceiver_depth=1,
    cbam_reduction=2,
    decoder_layers=1,
    max_new_tokens=40,
    beam_size=2,
    stage1_epochs=1,
    stage1_batch_size=4,
    stage2_epochs=1,
    stage2_batch_size=4,
    val_generation_limit=2,
    retrieval_per_class=1,
    retrieval_k=[1],
    retrieval_split="all",
)


def toy_config(**overrides) -> RunConfig:
    values = dict(TOY)
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def config() -> RunConfig:
    return toy_config()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus") / "dataset"
    generate_corpus(seed=7, n_patients=12, visits_per_patient=3, missingness_profile=MissingnessProfile(),
                    out_dir=out, image_size=16, workers=2)
    return out


@pytest.fixture(scope="session")
def corpus(corpus_dir) -> Corpus:
    return Corpus(corpus_dir)


@pytest.fixture
def batch(corpus, config):
    dataset = StudyDataset(corpus, corpus.split("all")[:4], config)
    return collate_studies([dataset[i] for i in range(len(dataset))])


@pytest.fixture
def artifact_root(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "artifact_root", tmp_path)
    return tmp_path


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
