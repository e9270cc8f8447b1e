def test_import():
    from capgp.data import cyclic_data, synth, utils
    from capgp.models import capacity_models, forecaster, gpr, kernels
    from capgp.utils import errors, experiments_utils, linalg
    from runner import cli, inference, train
    from tools.analysis import metrics
    from tools.analysis import utils as analysis_utils
