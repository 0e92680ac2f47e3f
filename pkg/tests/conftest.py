"""Shared fixtures. The standard benchmark run is session-scoped because two
full trainings back it; every consumer (acceptance, training properties)
reuses the same result."""

import pytest


@pytest.fixture(scope="session")
def toy_smoke_run():
    """Tiny trained model + test duets for plumbing-level tests."""
    from duetlab.toy.separator import SeparatorConfig
    from duetlab.toy.train import BenchmarkSpec, TrainConfig, make_benchmark_duets, train

    spec = BenchmarkSpec(seed=11, n_train=8, n_test=2, duet_seconds=2.0)
    train_duets, test_duets = make_benchmark_duets(spec)
    config = SeparatorConfig(conditioning="ground_truth")
    result = train(train_duets, config, TrainConfig(epochs=1, seed=11))
    return result.params, config, test_duets


@pytest.fixture(scope="session")
def benchmark_run():
    """The standard toy benchmark: both trainings plus the three evaluations.

    Returns a dict with the trained results, evaluation reports, and the
    CPU seconds the whole run took.
    """
    import time

    from duetlab.metrics import ProjectionConfig
    from duetlab.toy.separator import SeparatorConfig
    from duetlab.toy.train import (
        BenchmarkSpec,
        TrainConfig,
        evaluate_toy,
        make_benchmark_duets,
        train,
    )

    spec = BenchmarkSpec()
    start = time.process_time()
    train_duets, test_duets = make_benchmark_duets(spec)

    train_config = TrainConfig(epochs=40, seed=spec.seed, learning_rate=3e-3,
                               batch_size=2)
    config_gt = SeparatorConfig(conditioning="ground_truth")
    config_none = SeparatorConfig(conditioning="none")
    result_gt = train(train_duets, config_gt, train_config)
    result_none = train(train_duets, config_none, train_config)

    metric_config = ProjectionConfig(filter_length=256)
    report_gt = evaluate_toy(result_gt.params, test_duets, config_gt,
                             mode="ground_truth", seed=spec.seed,
                             degrade_drop=spec.degrade_drop,
                             degrade_jitter=spec.degrade_jitter,
                             metric_config=metric_config)
    report_degraded = evaluate_toy(result_gt.params, test_duets, config_gt,
                                   mode="degraded", seed=spec.seed,
                                   degrade_drop=spec.degrade_drop,
                                   degrade_jitter=spec.degrade_jitter,
                                   metric_config=metric_config)
    report_none = evaluate_toy(result_none.params, test_duets, config_none,
                               mode="none", seed=spec.seed,
                               metric_config=metric_config)
    cpu_seconds = time.process_time() - start

    return {
        "spec": spec,
        "result_gt": result_gt,
        "result_none": result_none,
        "report_gt": report_gt,
        "report_degraded": report_degraded,
        "report_none": report_none,
        "test_duets": test_duets,
        "cpu_seconds": cpu_seconds,
    }
