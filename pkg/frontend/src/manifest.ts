/**
 * Manifest serialization matching the reader's canonical form: keys
 * sorted at every level, two-space indentation, ASCII-escaped strings,
 * and shortest round-trip numbers with exponents only outside
 * [1e-4, 1e16). A manifest written here and rewritten by the consumer
 * is byte-identical, which keeps cross-package caches diffable.
 */

export type JsonValue =
  | null
  | boolean
  | number
  | string
  | JsonValue[]
  | { [key: string]: JsonValue }

const ESCAPES: Record<string, string> = {
  '"': '\\"',
  '\\': '\\\\',
  '\b': '\\b',
  '\f': '\\f',
  '\n': '\\n',
  '\r': '\\r',
  '\t': '\\t'
}

export function escapeString (text: string): string {
  let out = '"'
  for (let i = 0; i < text.length; i++) {
    const ch = text[i]
    const code = text.charCodeAt(i)
    if (ESCAPES[ch] !== undefined) {
      out += ESCAPES[ch]
    } else if (code < 0x20 || code > 0x7e) {
      out += '\\u' + code.toString(16).padStart(4, '0')
    } else {
      out += ch
    }
  }
  return out + '"'
}

export function formatNumber (value: number): string {
  if (!Number.isFinite(value)) {
    throw new Error('manifests cannot carry non-finite numbers')
  }
  if (Number.isInteger(value) && Math.abs(value) < 2 ** 53) {
    return String(value)
  }
  const abs = Math.abs(value)
  if (abs !== 0 && (abs < 1e-4 || abs >= 1e16)) {
    // pad single-digit exponents: 1.5e-7 -> 1.5e-07
    return value.toExponential().replace(/e([+-])(\d)$/, 'e$10$2')
  }
  return String(value)
}

export function stringify (value: JsonValue, depth = 0): string {
  const pad = '  '.repeat(depth + 1)
  const close = '  '.repeat(depth)
  if (value === null) return 'null'
  if (typeof value === 'boolean') return value ? 'true' : 'false'
  if (typeof value === 'number') return formatNumber(value)
  if (typeof value === 'string') return escapeString(value)
  if (Array.isArray(value)) {
    if (value.length === 0) return '[]'
    const items = value.map((v) => pad + stringify(v, depth + 1))
    return '[\n' + items.join(',\n') + '\n' + close + ']'
  }
  const keys = Object.keys(value).sort()
  if (keys.length === 0) return '{}'
  const items = keys.map(
    (k) => `${pad}${escapeString(k)}: ${stringify(value[k], depth + 1)}`
  )
  return '{\n' + items.join(',\n') + '\n' + close + '}'
}

export function manifestText (value: JsonValue): string {
  return stringify(value) + '\n'
}
