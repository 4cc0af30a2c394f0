// Dossier model: the three answer sections, citation links, CSV export.

import type { ChunkRecord, StructuredAnswer } from './types.js';

export interface CitationLink {
  chunkId: string;
  resolved: boolean;
  text: string | null; // source chunk text once fetched
}

export interface DossierView {
  answer: StructuredAnswer;
  citations: Map<string, CitationLink>;
  exportEnabled: boolean;
  insufficientEvidence: boolean;
  rawFallback: string | null; // set when the payload failed validation
}

function isStringArray(v: unknown): v is string[] {
  return Array.isArray(v) && v.every((x) => typeof x === 'string');
}

export function validateAnswer(payload: unknown): StructuredAnswer | null {
  if (typeof payload !== 'object' || payload === null) return null;
  const p = payload as Record<string, unknown>;
  if (!Array.isArray(p.regulatory_basis) || !Array.isArray(p.precedents) || !Array.isArray(p.checklist)) {
    return null;
  }
  if (typeof p.disclaimer !== 'string') return null;
  for (const item of p.checklist as unknown[]) {
    const row = item as Record<string, unknown>;
    if (typeof row.risk !== 'string' || typeof row.action !== 'string' || !isStringArray(row.citations)) {
      return null;
    }
  }
  return payload as StructuredAnswer;
}

export function buildDossier(payload: unknown): DossierView {
  const answer = validateAnswer(payload);
  if (answer === null) {
    return {
      answer: { regulatory_basis: [], precedents: [], checklist: [], disclaimer: '' },
      citations: new Map(),
      exportEnabled: false,
      insufficientEvidence: false,
      rawFallback: JSON.stringify(payload, null, 2),
    };
  }
  const citations = new Map<string, CitationLink>();
  const cite = (chunkId: string) => {
    if (!citations.has(chunkId)) {
      citations.set(chunkId, { chunkId, resolved: false, text: null });
    }
  };
  for (const entry of answer.regulatory_basis) cite(entry.chunk_id);
  for (const entry of answer.precedents) cite(entry.chunk_id);
  for (const item of answer.checklist) for (const c of item.citations) cite(c);
  const empty =
    answer.regulatory_basis.length === 0 &&
    answer.precedents.length === 0 &&
    answer.checklist.length === 0;
  return {
    answer,
    citations,
    exportEnabled: answer.checklist.length > 0,
    insufficientEvidence: empty,
    rawFallback: null,
  };
}

/** Resolve every citation against the chunk-fetch endpoint; dead links stay flagged. */
export async function resolveCitations(
  view: DossierView,
  fetchChunk: (chunkId: string) => Promise<ChunkRecord | null>,
): Promise<void> {
  for (const link of view.citations.values()) {
    const chunk = await fetchChunk(link.chunkId);
    if (chunk !== null) {
      link.resolved = true;
      link.text = chunk.text;
    }
  }
}

// --- checklist CSV ----------------------------------------------------------

const CSV_HEADER = ['risk summary', 'action item', 'citations'];

function csvField(value: string): string {
  if (/[",\n\r]/.test(value)) {
    return '"' + value.replace(/"/g, '""') + '"';
  }
  return value;
}

export function exportChecklistCsv(view: DossierView): string {
  const lines = [CSV_HEADER.map(csvField).join(',')];
  for (const item of view.answer.checklist) {
    lines.push(
      [csvField(item.risk), csvField(item.action), csvField(item.citations.join('; '))].join(','),
    );
  }
  return lines.join('\r\n') + '\r\n';
}

function splitCsvLine(line: string): string[] {
  const fields: string[] = [];
  let cur = '';
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"' && line[i + 1] === '"') {
        cur += '"';
        i += 1;
      } else if (ch === '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ',') {
      fields.push(cur);
      cur = '';
    } else {
      cur += ch;
    }
  }
  fields.push(cur);
  return fields;
}

export function parseChecklistCsv(csv: string): { risk: string; action: string; citations: string[] }[] {
  // split into records respecting quoted newlines
  const records: string[] = [];
  let cur = '';
  let quotes = 0;
  for (const line of csv.split(/\r\n|\n/)) {
    cur = cur === '' ? line : cur + '\n' + line;
    quotes = (cur.match(/"/g) ?? []).length;
    if (quotes % 2 === 0) {
      if (cur.trim() !== '') records.push(cur);
      cur = '';
    }
  }
  const rows = records.slice(1).map(splitCsvLine); // drop header
  return rows.map(([risk, action, citations]) => ({
    risk: risk ?? '',
    action: action ?? '',
    citations: (citations ?? '')
      .split(';')
      .map((s) => s.trim())
      .filter((s) => s.length > 0),
  }));
}
