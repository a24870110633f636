"""Entropy-coded compression of quantized neural-network weights.

Weights are quantized per tensor (or per block) to 4 or 8 bits, the integer
codes are Huffman coded per tensor, and the coded stream is cut into
byte-aligned segments that decode independently on a thread pool.
"""

from .container import (ArchiveOptions, ArchiveStats, ModelArchive, TensorRecord, TensorStats,
                        archive_stats, read_archive, read_archive_bytes, save_archive,
                        write_archive)
from .errors import (ChecksumError, CorruptDataError, DecodeError, EtcwError, FormatError,
                     ManifestError, TruncatedError, ValidationError)
from .huffman import (Bitstream, HuffmanCodebook, SymbolHistogram, average_code_length,
                      bits_saved, build_codebook, build_histogram, decode_serial, encode,
                      histogram_from_counts, shannon_entropy)
from .parallel_decode import (DecodePlan, EncodedTensor, Segment, build_plan, decode_all_serial,
                              decode_parallel, encode_tensor, segment_tensor)
from .pipeline import compress_model, decode_archive, decompress_archive, decompress_bytes
from .quantizer import (QuantParams, QuantTensor, compute_params, dequantize, quantization_error,
                        quantize, quantize_blockwise, quantize_model, quantize_tensor,
                        select_scheme)
from .tensor_store import (FloatTensor, ModelManifest, generate_synthetic, load_model,
                           parse_manifest, save_model)

__version__ = "0.1.0"
