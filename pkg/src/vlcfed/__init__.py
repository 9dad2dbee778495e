"""Variable-length-code compression for federated-learning model updates."""

from .codelen import (
    BudgetConfig,
    PartitionPlan,
    ScaleState,
    atomic_optimize,
    fixed_length_plan,
    gamma,
    optimize_plan,
    smo_partition,
)
from .errors import (
    CorruptPacket,
    DegenerateDistribution,
    FieldOverflow,
    Infeasible,
    InvalidBits,
    InvalidInput,
    PacketOverflow,
    UnsupportedVersion,
    VlcError,
)
from .packet_codec import (
    HEADER_BITS,
    HEADER_BYTES,
    DecodedPacket,
    PacketEntry,
    decode_packet,
    encode_packet,
    packet_size_bytes,
    read_packets,
    write_packets,
)
from .pipeline import (
    CompressedRound,
    CompressionConfig,
    compress,
    compress_with_plan,
    decompress,
    evaluate,
    measured_error,
)
from .quantizer import (
    CentroidMeta,
    PqMeta,
    QsgdMeta,
    QuantizedBlock,
    QuantizerKind,
    dequantize,
    quant_error_model,
    quantize,
)
from .simulator import (
    CompressorSpec,
    FLConfig,
    RoundMetrics,
    aggregate,
    local_train,
    run_federated,
)
from .update_model import (
    PowerLawFit,
    RankedUpdates,
    UpdateVector,
    fit_power_law,
    rank_by_magnitude,
    read_uvec,
    write_uvec,
)

__version__ = "0.1.0"
