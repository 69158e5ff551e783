export {
  BadMagicError,
  BadRankError,
  BadVersionError,
  DType,
  FORMAT_VERSION,
  MAGIC,
  Tensor,
  TensorFormatError,
  TruncatedPayloadError,
  UnsupportedDTypeError,
  decodeTensor,
  encodeTensor,
  readTensor,
  tensorFrom,
  writeTensor,
} from "./tensor.js";
export {
  Checkpoint,
  canonicalJson,
  loadCheckpoint,
  saveCheckpoint,
} from "./checkpoint.js";
export {
  BindingError,
  BoundEncoder,
  BoundEncoderOptions,
  CameraCalibration,
  DimensionError,
  EncodeInputs,
  EncodeResult,
  FrameInput,
  IoError,
  ProprioInput,
  StaleHandleError,
  UsageError,
} from "./encoder.js";
export { VERSION } from "./version.js";
