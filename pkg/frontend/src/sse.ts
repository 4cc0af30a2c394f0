// Minimal SSE frame parser over a fetch body stream.

export interface SseFrame {
  event: string;
  data: string;
}

export function parseFrames(buffer: string): { frames: SseFrame[]; rest: string } {
  const parts = buffer.split(/\r?\n\r?\n/);
  const rest = parts.pop() ?? '';
  const frames: SseFrame[] = [];
  for (const part of parts) {
    let event = 'message';
    const dataLines: string[] = [];
    for (const rawLine of part.split(/\r?\n/)) {
      if (rawLine.startsWith('event:')) {
        event = rawLine.slice(6).trim();
      } else if (rawLine.startsWith('data:')) {
        dataLines.push(rawLine.slice(5).trimStart());
      }
    }
    if (dataLines.length > 0) {
      frames.push({ event, data: dataLines.join('\n') });
    }
  }
  return { frames, rest };
}

export async function readSseStream(
  body: ReadableStream<Uint8Array>,
  onFrame: (frame: SseFrame) => void,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder('utf-8');
  let buffer = '';
  for (;;) {
    const { value, done } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    const { frames, rest } = parseFrames(buffer);
    buffer = rest;
    for (const frame of frames) onFrame(frame);
  }
  // flush a trailing frame that arrived without a final blank line
  buffer += decoder.decode();
  if (buffer.trim()) {
    const { frames } = parseFrames(buffer + '\n\n');
    for (const frame of frames) onFrame(frame);
  }
}
