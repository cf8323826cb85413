"""graphfb: two-channel filterbank GNNs and graph smoothness measurement."""

from .graph import (
    Graph,
    Split,
    SplitSet,
    import_raw,
    load_canonical,
    load_splits,
    make_splits,
    row_normalize_features,
    save_canonical,
    save_splits,
)
from .operators import (
    OperatorKind,
    SparseOperator,
    apply,
    build_operator,
    dense_eig,
    eigengap_check,
    graph_fourier,
)
from .smoothness import (
    SmoothnessReport,
    dirichlet_energy,
    one_hot,
    s_value,
    signal_energy,
    smoothness_report,
)
from .models import ModelSpec, ParamSet, build_model_operators, init_params, model_forward
from .trainer import TrainConfig, TrainResult, output_smoothness, run_experiment, train

__version__ = "0.1.0"
