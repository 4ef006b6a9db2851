import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """One pass/fail line per acceptance criterion, echoed in the summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    _CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)


def tiny_config():
    """The small separable-corpus configuration behind the tiny_run fixture."""
    from deepchallenger import pipeline
    from deepchallenger.nn import TrainConfig
    from deepchallenger.synth import SyntheticConfig

    train = TrainConfig(max_epochs=8, patience=3)
    return pipeline.RunConfig(
        seed=5,
        synth=SyntheticConfig(
            challenges=3, users=6, videos_per_user=4, videos_per_challenge=6,
            frames_min=3, frames_max=5, signal=1.0, flip_rate=0.0,
            class_weight=0.5, author_weight=0.25, jitter=0.02,
            motif_shifts=1, seed=5,
        ),
        encoder=pipeline.EncoderSettings(
            visual_a={"id": "toy-visual", "d_f": 8, "seed": 101},
            visual_b={"id": "toy-visual", "d_f": 8, "seed": 102},
            caption={"id": "toy-caption", "d_t": 16, "seed": 201},
            frames_per_video=4, image_size=16,
        ),
        proxy_challenge=pipeline.ProxySettings(hidden_dim=16, store="a", train=train),
        proxy_user=pipeline.ProxySettings(hidden_dim=16, store="b", train=train),
        representations=pipeline.RepresentationSettings(n_c=3, m_u=3),
        participation=pipeline.ParticipationSettings(hidden_dim=16, train=train),
        baselines=pipeline.BaselineSettings(hidden_dim=16, train=train),
    )


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One fully executed pipeline run on a small separable corpus.

    Shared across test modules; treat the directory as read-only.
    """
    from deepchallenger import pipeline

    out_dir = tmp_path_factory.mktemp("tiny-run")
    config = tiny_config()
    pipeline.stage_synth(out_dir, config)
    pipeline.stage_encode(out_dir, config)
    pipeline.stage_train_proxy(out_dir, config)
    pipeline.stage_build_reprs(out_dir, config)
    pipeline.stage_train_participation(out_dir, config)
    pipeline.stage_evaluate(out_dir, config)
    pipeline.stage_report(out_dir, config)
    return out_dir, config
