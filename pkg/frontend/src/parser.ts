/** Parser for the `.fags` binary model format.
 *
 * Layout (little-endian):
 *   bytes 0..4    magic "FAGS"
 *   bytes 4..24   u32 version, u64 count, u32 numLevels, u32 shDegree
 *   bytes 24..36  background rgb (3 x f32)
 *   then per-Gaussian arrays as f32: positions (n x 3), quaternions (n x 4,
 *   wxyz), logScales (n x 3), opacityLogits (n), shCoeffs (n x 3 x basis)
 *   trailing: levels (n x u8)
 */

export interface ViewerModel {
  count: number;
  numLevels: number;
  shBasis: number;
  background: Float32Array;
  positions: Float32Array;
  quaternions: Float32Array;
  logScales: Float32Array;
  opacityLogits: Float32Array;
  shCoeffs: Float32Array;
  levels: Uint8Array;
}

export class ParseError extends Error {
  readonly offset: number;

  constructor(message: string, offset: number) {
    super(`${message} (byte offset ${offset})`);
    this.name = "ParseError";
    this.offset = offset;
  }
}

const MAGIC = [0x46, 0x41, 0x47, 0x53]; // "FAGS"
const HEADER_SIZE = 24;

export function parseModel(buf: ArrayBuffer): ViewerModel {
  const bytes = new Uint8Array(buf);
  if (bytes.length < 4 || MAGIC.some((m, i) => bytes[i] !== m)) {
    throw new ParseError("bad magic; not a .fags model file", 0);
  }
  if (bytes.length < HEADER_SIZE + 12) {
    throw new ParseError("truncated header", bytes.length);
  }
  const view = new DataView(buf);
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new ParseError(`unsupported version ${version}`, 4);
  }
  const count = Number(view.getBigUint64(8, true));
  if (!Number.isSafeInteger(count)) {
    throw new ParseError("gaussian count exceeds safe integer range", 8);
  }
  const numLevels = view.getUint32(16, true);
  const degree = view.getUint32(20, true);
  if (degree > 1) {
    throw new ParseError(`unsupported SH degree ${degree}`, 20);
  }
  const basis = (degree + 1) ** 2;

  let offset = HEADER_SIZE;
  const readF32 = (name: string, n: number): Float32Array => {
    const end = offset + 4 * n;
    if (end > bytes.length) {
      throw new ParseError(`truncated file: missing ${name} array`, offset);
    }
    // copy via slice so the typed array is aligned regardless of source
    const out = new Float32Array(buf.slice(offset, end));
    for (let i = 0; i < out.length; i++) {
      if (!Number.isFinite(out[i])) {
        throw new ParseError(
          `non-finite value in ${name} array at element ${i}`,
          offset + 4 * i,
        );
      }
    }
    offset = end;
    return out;
  };

  const background = readF32("background", 3);
  const positions = readF32("positions", count * 3);
  const quaternions = readF32("quaternions", count * 4);
  const logScales = readF32("logScales", count * 3);
  const opacityLogits = readF32("opacityLogits", count);
  const shCoeffs = readF32("shCoeffs", count * 3 * basis);

  if (offset + count > bytes.length) {
    throw new ParseError("truncated file: missing levels array", offset);
  }
  const levels = bytes.slice(offset, offset + count);
  offset += count;
  if (offset !== bytes.length) {
    throw new ParseError(
      `trailing bytes after levels array (${bytes.length - offset} extra)`,
      offset,
    );
  }
  for (let i = 0; i < count; i++) {
    if (levels[i] < 1 || levels[i] > numLevels) {
      throw new ParseError(
        `level tag ${levels[i]} outside [1, ${numLevels}] at gaussian ${i}`,
        offset - count + i,
      );
    }
  }

  return {
    count,
    numLevels,
    shBasis: basis,
    background,
    positions,
    quaternions,
    logScales,
    opacityLogits,
    shCoeffs,
    levels,
  };
}

/** Number of Gaussians with level <= k (the level-slider subset size). */
export function levelSubsetCount(model: ViewerModel, k: number): number {
  let n = 0;
  for (let i = 0; i < model.count; i++) {
    if (model.levels[i] <= k) n++;
  }
  return n;
}
