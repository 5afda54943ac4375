"""dfedsim: decentralized federated averaging with momentum, simulated.

Clients connected by an undirected graph train locally with heavy-ball SGD
and synchronize by gossip averaging (optionally with quantized payloads).
The package pairs the simulator with exact evaluations of the algorithm's
convergence-bound constants so runs can be checked against the theory.
"""

from .engine import (
    ALGORITHMS,
    ClientState,
    RoundRecord,
    RunConfig,
    RunResult,
    expected_total_bits,
    run_experiment,
)
from .local_training import DivergenceError, LocalTrainerConfig, LocalTrajectory, run_local
from .problems import (
    MeasuredConstants,
    Partition,
    make_logistic,
    make_quadratic,
    make_tiny_mlp,
    partition_indices,
)
from .quantization import (
    QuantizationRangeError,
    QuantizedVector,
    QuantizerSpec,
    decode_payload,
    dequantize,
    encode_payload,
    payload_bits,
    quantize_scalar,
    quantize_vector,
    unquantized_bits,
)
from .theory import (
    BoundInapplicableError,
    CommSaving,
    TheoryConstants,
    comm_saving_check,
    consensus_distance,
    optimal_stepsize_pl,
    pl_bound,
    theorem1_bound,
    theorem1_constants,
)
from .topology import (
    Graph,
    MixingMatrix,
    SpectralValidationError,
    TopologyError,
    averaging_matrix,
    build_random_connected,
    build_ring,
    contraction_check,
    max_degree_weights,
    metropolis_hastings,
    mixing_from_weights,
    spectral_constant,
)

__version__ = "0.1.0"
