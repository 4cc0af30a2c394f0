// Page wiring: submit queries, render the live trace, then the dossier.

import { GmpilotClient } from './api.js';
import { buildDossier, exportChecklistCsv, resolveCitations, DossierView } from './dossier.js';
import { TraceView } from './trace.js';
import type { StreamEvent } from './types.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function shouldSubmit(query: string): boolean {
  return query.trim().length > 0;
}

function bubble(event: StreamEvent): HTMLElement {
  const div = document.createElement('div');
  div.className = `bubble bubble-${event.type}`;
  const label = document.createElement('span');
  label.className = 'bubble-label';
  label.textContent = event.type;
  const body = document.createElement('span');
  body.textContent = event.payload.content ?? event.payload.detail ?? '';
  div.append(label, body);
  return div;
}

function renderDossier(view: DossierView, container: HTMLElement, sidePanel: HTMLElement): void {
  container.innerHTML = '';
  if (view.rawFallback !== null) {
    const pre = document.createElement('pre');
    pre.className = 'raw-fallback';
    pre.textContent = view.rawFallback;
    container.appendChild(pre);
    return;
  }
  if (view.insufficientEvidence) {
    const note = document.createElement('p');
    note.className = 'insufficient';
    note.textContent = view.answer.disclaimer || 'Insufficient evidence retrieved.';
    container.appendChild(note);
    return;
  }

  const citationChip = (chunkId: string): HTMLElement => {
    const link = view.citations.get(chunkId);
    const chip = document.createElement('button');
    chip.className = 'citation' + (link && !link.resolved ? ' citation-dead' : '');
    chip.textContent = chunkId;
    chip.title = link && !link.resolved ? 'citation did not resolve' : 'show source';
    chip.addEventListener('click', () => {
      sidePanel.textContent = link?.text ?? `[${chunkId}] source unavailable`;
      sidePanel.classList.add('open');
    });
    return chip;
  };

  const section = (title: string): HTMLElement => {
    const h = document.createElement('h3');
    h.textContent = title;
    container.appendChild(h);
    const div = document.createElement('div');
    container.appendChild(div);
    return div;
  };

  const basis = section('Regulatory basis');
  for (const entry of view.answer.regulatory_basis) {
    const p = document.createElement('p');
    p.appendChild(citationChip(entry.chunk_id));
    p.append(' ' + entry.excerpt);
    basis.appendChild(p);
  }
  const precedents = section('Historical precedents');
  for (const entry of view.answer.precedents) {
    const p = document.createElement('p');
    p.appendChild(citationChip(entry.chunk_id));
    p.append(' ' + entry.summary);
    precedents.appendChild(p);
  }
  const checklist = section('Inspection checklist');
  const table = document.createElement('table');
  const head = document.createElement('tr');
  for (const col of ['Risk', 'Action', 'Citations']) {
    const th = document.createElement('th');
    th.textContent = col;
    head.appendChild(th);
  }
  table.appendChild(head);
  for (const item of view.answer.checklist) {
    const tr = document.createElement('tr');
    const risk = document.createElement('td');
    risk.textContent = item.risk + (item.unsupported ? ' (unsupported)' : '');
    const action = document.createElement('td');
    action.textContent = item.action;
    const cites = document.createElement('td');
    for (const c of item.citations) cites.appendChild(citationChip(c));
    tr.append(risk, action, cites);
    table.appendChild(tr);
  }
  checklist.appendChild(table);

  const disclaimer = document.createElement('p');
  disclaimer.className = 'disclaimer';
  disclaimer.textContent = view.answer.disclaimer;
  container.appendChild(disclaimer);
}

export function main(): void {
  const baseUrl = el<HTMLInputElement>('base-url');
  const queryInput = el<HTMLInputElement>('query');
  const sendButton = el<HTMLButtonElement>('send');
  const retryButton = el<HTMLButtonElement>('retry');
  const exportButton = el<HTMLButtonElement>('export');
  const traceContainer = el<HTMLDivElement>('trace');
  const dossierContainer = el<HTMLDivElement>('dossier');
  const sidePanel = el<HTMLDivElement>('side-panel');
  const banner = el<HTMLDivElement>('banner');

  let currentDossier: DossierView | null = null;
  let running = false;

  const run = async () => {
    const query = queryInput.value;
    if (!shouldSubmit(query) || running) return;
    running = true;
    banner.textContent = '';
    banner.className = 'banner';
    retryButton.hidden = true;
    exportButton.disabled = true;
    traceContainer.innerHTML = '';
    dossierContainer.innerHTML = '';
    sidePanel.classList.remove('open');

    const client = new GmpilotClient(baseUrl.value || window.location.origin);
    const trace = new TraceView();
    try {
      const sessionId = await client.createSession();
      await client.streamQuery(sessionId, query, (event) => {
        for (const released of trace.addEvent(event)) {
          traceContainer.appendChild(bubble(released));
        }
      });
    } catch (err) {
      trace.markDisconnected(err instanceof Error ? err.message : String(err));
    }

    if (trace.status === 'error') {
      banner.textContent = `query failed: ${trace.errorDetail} (partial trace preserved)`;
      banner.className = 'banner banner-error';
      retryButton.hidden = false;
    }
    const finalEvent = trace.finalAnswerEvent();
    if (finalEvent && finalEvent.payload.answer) {
      currentDossier = buildDossier(finalEvent.payload.answer);
      await resolveCitations(currentDossier, (id) => client.fetchChunk(id));
      renderDossier(currentDossier, dossierContainer, sidePanel);
      exportButton.disabled = !currentDossier.exportEnabled;
    }
    running = false;
  };

  sendButton.addEventListener('click', run);
  retryButton.addEventListener('click', run);
  queryInput.addEventListener('keydown', (e) => {
    if (e.key === 'Enter') run();
  });
  exportButton.addEventListener('click', () => {
    if (!currentDossier || !currentDossier.exportEnabled) return;
    const csv = exportChecklistCsv(currentDossier);
    const blob = new Blob([csv], { type: 'text/csv' });
    const a = document.createElement('a');
    a.href = URL.createObjectURL(blob);
    a.download = 'inspection-checklist.csv';
    a.click();
    URL.revokeObjectURL(a.href);
  });
}

if (typeof document !== 'undefined' && document.getElementById('send')) {
  main();
}
