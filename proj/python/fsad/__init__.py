"""Few-shot anomaly detection with an adversarial feature-pair loss."""

from ._fsad import (  # noqa: F401
    Error,
    __version__,
    auroc,
    build_report,
    checkpoint_info,
    config_hash,
    dump_features,
    evaluate,
    generate_synthetic,
    gradcheck,
    pixel_auroc,
    resolve_config,
    scan_dataset,
    train,
)
