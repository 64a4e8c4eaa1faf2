"""ringkit: SMILES -> hierarchical atom/ring graphs -> property regression."""

from .smiles import (
    Atom,
    AtomGraph,
    Bond,
    DisconnectedInput,
    SmilesParseError,
    UnclosedBranch,
    UnclosedRing,
    UnknownElement,
    ValenceError,
    compute_implicit_hydrogens,
    featurize_atom_graph,
    parse_smiles,
)
from .rings import (
    Ring,
    RingConnection,
    RingGraph,
    RingLimitExceeded,
    build_ring_graph,
    find_ring_connections,
    find_smallest_rings,
    ring_signature,
)
from .hiergraph import (
    EmptyCorpus,
    HierGraph,
    SchemaError,
    Vocabulary,
    build_hier_graph,
    build_vocab,
    deserialize,
    encode_ring_attributes,
    serialize,
)
from .model import (
    BatchedGraph,
    ModelConfig,
    ModelParams,
    NonFiniteTarget,
    VocabMismatch,
    build_batch,
    forward,
    init_params,
    mae_loss,
)
from .tensor import Tape, Tensor, backward, grad_check, onecycle_lr
# the training loop lives in ringkit.train (kept off the package root so
# the submodule name stays importable)
from .train import Dataset, TrainConfig, load_csv, split_dataset

__version__ = "0.1.0"
