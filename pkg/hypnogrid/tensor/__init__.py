from .tensor import Tensor, Graph, backward, current_graph, is_grad_enabled, no_grad, reset_graph
from .functional import RunningStats
from .gradcheck import grad_check, run_oracle_suite
