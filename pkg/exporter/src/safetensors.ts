/**
 * Minimal safetensors reader: little-endian u64 header length, JSON header
 * mapping tensor names to { dtype, shape, data_offsets }, then raw bytes.
 *
 * Everything is materialized as Float32Array. F16 and BF16 sources are
 * widened to 32-bit; anything else is rejected. A writer is included so
 * tests can fabricate inputs without binary fixtures.
 */

export interface TensorEntry {
  shape: number[];
  data: Float32Array;
}

export type TensorMap = Map<string, TensorEntry>;

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export class SafetensorsError extends Error {}

function halfToFloat(h: number): number {
  const sign = h & 0x8000 ? -1 : 1;
  const exp = (h >> 10) & 0x1f;
  const mant = h & 0x3ff;
  if (exp === 0) return sign * 2 ** -14 * (mant / 1024);
  if (exp === 31) return mant ? NaN : sign * Infinity;
  return sign * 2 ** (exp - 15) * (1 + mant / 1024);
}

function decode(dtype: string, bytes: Uint8Array, count: number): Float32Array {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float32Array(count);
  switch (dtype) {
    case "F32":
      for (let i = 0; i < count; i++) out[i] = view.getFloat32(i * 4, true);
      return out;
    case "F16":
      for (let i = 0; i < count; i++) out[i] = halfToFloat(view.getUint16(i * 2, true));
      return out;
    case "BF16": {
      const scratch = new DataView(new ArrayBuffer(4));
      for (let i = 0; i < count; i++) {
        scratch.setUint32(0, view.getUint16(i * 2, true) << 16, false);
        out[i] = scratch.getFloat32(0, false);
      }
      return out;
    }
    default:
      throw new SafetensorsError(`unsupported dtype ${dtype} (have F32/F16/BF16)`);
  }
}

function bytesPerElement(dtype: string): number {
  if (dtype === "F32") return 4;
  if (dtype === "F16" || dtype === "BF16") return 2;
  throw new SafetensorsError(`unsupported dtype ${dtype} (have F32/F16/BF16)`);
}

export function parseSafetensors(buf: Uint8Array): TensorMap {
  if (buf.length < 8) throw new SafetensorsError("file shorter than the header length field");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const headerLen = Number(view.getBigUint64(0, true));
  if (!Number.isSafeInteger(headerLen) || 8 + headerLen > buf.length) {
    throw new SafetensorsError(`header length ${headerLen} exceeds file size ${buf.length}`);
  }
  const headerText = new TextDecoder().decode(buf.subarray(8, 8 + headerLen));
  let header: Record<string, HeaderEntry>;
  try {
    header = JSON.parse(headerText);
  } catch {
    throw new SafetensorsError("header is not valid JSON");
  }
  const body = buf.subarray(8 + headerLen);
  const tensors: TensorMap = new Map();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const [start, end] = entry.data_offsets;
    const count = entry.shape.reduce((a, b) => a * b, 1);
    if (end > body.length || end - start !== count * bytesPerElement(entry.dtype)) {
      throw new SafetensorsError(
        `tensor ${name}: offsets [${start}, ${end}] inconsistent with shape [${entry.shape}]`
      );
    }
    tensors.set(name, {
      shape: entry.shape,
      data: decode(entry.dtype, body.subarray(start, end), count),
    });
  }
  return tensors;
}

/** Serialize float32 tensors; insertion order becomes storage order. */
export function writeSafetensors(tensors: TensorMap): Uint8Array {
  const header: Record<string, HeaderEntry> = {};
  const blobs: Uint8Array[] = [];
  let off = 0;
  for (const [name, { shape, data }] of tensors) {
    const raw = new Uint8Array(data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength));
    header[name] = { dtype: "F32", shape, data_offsets: [off, off + raw.length] };
    blobs.push(raw);
    off += raw.length;
  }
  const head = new TextEncoder().encode(JSON.stringify(header));
  const out = new Uint8Array(8 + head.length + off);
  new DataView(out.buffer).setBigUint64(0, BigInt(head.length), true);
  out.set(head, 8);
  let pos = 8 + head.length;
  for (const raw of blobs) {
    out.set(raw, pos);
    pos += raw.length;
  }
  return out;
}
