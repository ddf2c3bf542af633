"""Layerwise activation probing: standardize, project onto principal
components, train surrogate classifiers, and locate where representations
collapse onto their class means.
"""

__version__ = "0.1.0"

from probekit.activation_io import (
    ActivationSet,
    Manifest,
    ManifestLayer,
    load_manifest,
    read_activation_set,
    validate_header,
    write_activation_set,
)
from probekit.collapse import (
    CollapseReport,
    compute_collapse_report,
    detect_collapse_layer,
    nc1_ratio,
    nc4_agreement,
)
from probekit.errors import ConfigError, ConvergenceError, FormatError, ProbekitError
from probekit.pca import PcaModel, explained_variance_cumulative, fit_pca, load_pca, project, save_pca
from probekit.pipeline import RunConfig, emit_plot_data, run_pipeline, validate_config
from probekit.preprocess import Standardizer, apply_standardizer, fit_standardizer
from probekit.probes import (
    KnnModel,
    LinearSvmModel,
    NccModel,
    evaluate_accuracy,
    fit_knn,
    fit_linear_svm,
    fit_ncc,
    predict_knn,
    predict_ncc,
    predict_svm,
)
from probekit.sweep import (
    AccuracyCurve,
    MinPcStat,
    SweepGrid,
    SweepReport,
    default_grid,
    min_pcs_for_fraction,
    run_sweep,
)
from probekit.synth import (
    LayerFamilySpec,
    generate_layer_family,
    make_blobs,
    write_layer_family,
)
