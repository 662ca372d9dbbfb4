from __future__ import annotations

import pytest

from skillforge import synthetic
from skillforge.llm import Gateway, ScriptedProvider
from skillforge.skill import parse_skill_files

from skill_fixtures import TEMPLATE_FILES


@pytest.fixture
def template_skill():
    return parse_skill_files(TEMPLATE_FILES)


@pytest.fixture(scope="session")
def synth_bundle(tmp_path_factory):
    """Synthetic corpus, registry and article store written once per session."""
    d = tmp_path_factory.mktemp("bundle")
    return synthetic.write_bundle(d, n=200, seed=7)


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    return synthetic.write_bundle(d, n=60, seed=3)


def scripted(mapping, strict=True):
    return Gateway(ScriptedProvider.from_mapping(mapping, strict=strict), concurrency=1)


def run_evolve(bundle, out_dir, provider=None, **overrides):
    """Run the full loop on a synthetic bundle; returns (config, result, provider)."""
    from skillforge import orchestrator
    from skillforge.corpus import load_corpus
    from skillforge.llm import RecordingProvider

    if provider is None:
        provider = RecordingProvider(synthetic.SimulatedProvider.from_tickets(load_corpus(bundle["corpus"]).tickets))
    opts = dict(registry=str(bundle["registry"]), articles=str(bundle["articles"]), concurrency=2)
    opts.update(overrides)
    cfg = orchestrator.RunConfig(str(bundle["corpus"]), str(out_dir), **opts)
    return cfg, orchestrator.evolve(cfg, provider), provider


@pytest.fixture(scope="session")
def evolved(synth_bundle, tmp_path_factory):
    """One recorded three-round run on the 200-ticket corpus."""
    return run_evolve(synth_bundle, tmp_path_factory.mktemp("evolve"))
