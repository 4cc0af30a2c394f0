// Wire types mirroring the service API.

export type StreamEventType = 'thought' | 'action' | 'observation' | 'final' | 'error';

export interface StreamEvent {
  type: StreamEventType;
  seq: number;
  payload: {
    kind?: string;
    content?: string;
    tool_call?: { tool: string; arguments: Record<string, string> } | null;
    evidence?: string[];
    answer?: StructuredAnswer;
    error?: string;
    detail?: string;
  };
}

export interface BasisEntry {
  chunk_id: string;
  excerpt: string;
}

export interface PrecedentEntry {
  chunk_id: string;
  summary: string;
}

export interface ChecklistItem {
  risk: string;
  action: string;
  citations: string[];
  unsupported?: boolean;
}

export interface StructuredAnswer {
  regulatory_basis: BasisEntry[];
  precedents: PrecedentEntry[];
  checklist: ChecklistItem[];
  disclaimer: string;
}

export interface ChunkRecord {
  chunk_id: string;
  doc_id: string;
  kind: string;
  text: string;
  char_span: [number, number];
  seq: number;
}
