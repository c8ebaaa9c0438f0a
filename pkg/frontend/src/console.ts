/**
 * The rating console: one task at a time, four binary aspect toggles,
 * submit-and-advance, plus a live stats dashboard.
 *
 * Rendering is plain DOM against a provided root element so the whole
 * session can be scripted headlessly. Displayed statistics are verbatim
 * service fields (see api.ts).
 */
import {
  AnnotationApi,
  ApiError,
  ConflictError,
  Ratings,
  Task,
} from './api.js';

export const ASPECTS = [
  ['plausibility', 'Plausibility'],
  ['typicality', 'Typicality'],
  ['human_centric', 'Human-centric'],
  ['filter_rationale', 'Filter rationale'],
] as const;

export type AspectKey = (typeof ASPECTS)[number][0];

export interface ConsoleOptions {
  raterId: string;
  pollIntervalMs?: number;
}

/** Verbatim rendering of a service field; null becomes an em-dash placeholder. */
export function formatStat(value: number | null | undefined): string {
  return value === null || value === undefined ? '—' : String(value);
}

export class ReviewConsole {
  private readonly doc: Document;
  private task: Task | null = null;
  private toggles = new Map<AspectKey, 0 | 1>();
  private readonly submitted = new Set<string>();
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: AnnotationApi,
    private readonly options: ConsoleOptions,
  ) {
    this.doc = root.ownerDocument;
  }

  async start(): Promise<void> {
    this.renderSkeleton();
    await this.loadNextTask();
    await this.refreshDashboard();
    const interval = this.options.pollIntervalMs ?? 5000;
    if (interval > 0) {
      this.pollTimer = setInterval(() => void this.refreshDashboard(), interval);
    }
  }

  stop(): void {
    if (this.pollTimer !== null) clearInterval(this.pollTimer);
    this.pollTimer = null;
  }

  // --- data flow -----------------------------------------------------------

  async loadNextTask(): Promise<void> {
    this.setBanner(null);
    try {
      this.task = await this.api.nextTask(this.options.raterId);
    } catch (error) {
      this.task = null;
      this.renderTask();
      this.setBanner(`Cannot reach the annotation service: ${describe(error)}`, () =>
        void this.loadNextTask(),
      );
      return;
    }
    this.toggles.clear();
    this.renderTask();
  }

  async submit(): Promise<void> {
    if (!this.task || !this.allAspectsSet()) return;
    const key = `${this.options.raterId}:${this.task.task_id}`;
    if (this.submitted.has(key)) return; // client-side idempotence guard
    const ratings = Object.fromEntries(this.toggles) as unknown as Ratings;
    let conflictNotice: string | null = null;
    try {
      this.submitted.add(key);
      await this.api.submitRatings(this.task.task_id, this.options.raterId, ratings);
    } catch (error) {
      if (error instanceof ConflictError) {
        conflictNotice = `Task ${this.task.task_id} was already completed elsewhere; skipping.`;
      } else {
        this.submitted.delete(key); // retryable: nothing was recorded
        this.setBanner(`Submit failed: ${describe(error)}`, () => void this.submit());
        return;
      }
    }
    await this.loadNextTask();
    if (conflictNotice) this.setBanner(conflictNotice);
    await this.refreshDashboard();
  }

  async refreshDashboard(): Promise<void> {
    const dashboard = this.el('dashboard');
    try {
      const [summary, agreement] = await Promise.all([
        this.api.summary(),
        this.api.agreement('all'),
      ]);
      dashboard.querySelector('[data-testid="stale"]')?.remove();
      this.text('stat-open', formatStat(summary.tasks_open));
      this.text('stat-complete', formatStat(summary.tasks_complete));
      for (const [key] of ASPECTS) {
        this.text(`rate-${key}`, formatStat(summary.positive_rates[key]));
      }
      this.text('stat-agreement', formatStat(agreement.pairwise_agreement));
      this.text('stat-kappa', formatStat(agreement.fleiss_kappa));
    } catch {
      if (!dashboard.querySelector('[data-testid="stale"]')) {
        const stale = this.doc.createElement('p');
        stale.dataset.testid = 'stale';
        stale.className = 'stale';
        stale.textContent = 'Stats may be stale: last refresh failed.';
        dashboard.append(stale);
      }
    }
  }

  // --- rendering -------------------------------------------------------------

  private renderSkeleton(): void {
    this.root.innerHTML = `
      <div class="banner" data-testid="banner" hidden></div>
      <section class="task" data-testid="task"></section>
      <section class="dashboard" data-testid="dashboard">
        <h2>Progress</h2>
        <dl>
          <dt>Open tasks</dt><dd data-testid="stat-open">—</dd>
          <dt>Completed tasks</dt><dd data-testid="stat-complete">—</dd>
          ${ASPECTS.map(
            ([key, label]) =>
              `<dt>${label} positive rate</dt><dd data-testid="rate-${key}">—</dd>`,
          ).join('')}
          <dt>Pairwise agreement</dt><dd data-testid="stat-agreement">—</dd>
          <dt>Fleiss's kappa</dt><dd data-testid="stat-kappa">—</dd>
        </dl>
      </section>
    `;
  }

  private renderTask(): void {
    const section = this.el('task');
    if (!this.task) {
      section.innerHTML = `<p class="empty" data-testid="empty">No open tasks. You are all caught up.</p>`;
      return;
    }
    const { payload } = this.task;
    section.innerHTML = `
      <h2 data-testid="task-id">${this.task.task_id}</h2>
      <div class="products">
        ${productCard('a', payload.product_a_title, payload.product_a_images[0])}
        ${productCard('b', payload.product_b_title, payload.product_b_images[0])}
      </div>
      <p class="intention" data-testid="intention"></p>
      <p class="rationale">Filter said <strong>${payload.verdict_accept ? 'Yes' : 'No'}</strong>:
        <span data-testid="rationale"></span></p>
      <div class="aspects">
        ${ASPECTS.map(
          ([key, label]) => `
          <fieldset data-aspect="${key}">
            <legend>${label}</legend>
            <button type="button" data-testid="${key}-yes" data-value="1">Yes</button>
            <button type="button" data-testid="${key}-no" data-value="0">No</button>
          </fieldset>`,
        ).join('')}
      </div>
      <button type="button" class="submit" data-testid="submit" disabled>Submit ratings</button>
    `;
    // Long free text goes through textContent, never innerHTML.
    this.text('intention', payload.intention);
    this.text('rationale', payload.verdict_rationale);

    for (const image of section.querySelectorAll<HTMLImageElement>('img')) {
      image.addEventListener('error', () => {
        const placeholder = this.doc.createElement('div');
        placeholder.className = 'image-placeholder';
        placeholder.dataset.testid = 'image-placeholder';
        placeholder.textContent = 'image unavailable';
        image.replaceWith(placeholder);
      });
    }
    for (const button of section.querySelectorAll<HTMLButtonElement>('fieldset button')) {
      button.addEventListener('click', () => {
        const aspect = (button.closest('fieldset') as HTMLElement).dataset.aspect as AspectKey;
        this.setAspect(aspect, Number(button.dataset.value) as 0 | 1);
      });
    }
    this.el('submit').addEventListener('click', () => void this.submit());
  }

  setAspect(aspect: AspectKey, value: 0 | 1): void {
    this.toggles.set(aspect, value);
    const fieldset = this.root.querySelector(`fieldset[data-aspect="${aspect}"]`);
    fieldset?.querySelectorAll('button').forEach((button) => {
      button.classList.toggle('selected', Number(button.dataset.value) === value);
    });
    (this.el('submit') as HTMLButtonElement).disabled = !this.allAspectsSet();
  }

  allAspectsSet(): boolean {
    return ASPECTS.every(([key]) => this.toggles.has(key));
  }

  currentTaskId(): string | null {
    return this.task?.task_id ?? null;
  }

  private setBanner(message: string | null, retry?: () => void): void {
    const banner = this.el('banner');
    banner.innerHTML = '';
    if (message === null) {
      banner.setAttribute('hidden', '');
      return;
    }
    banner.removeAttribute('hidden');
    const text = this.doc.createElement('span');
    text.textContent = message;
    banner.append(text);
    if (retry) {
      const button = this.doc.createElement('button');
      button.type = 'button';
      button.dataset.testid = 'retry';
      button.textContent = 'Retry';
      button.addEventListener('click', retry);
      banner.append(button);
    }
  }

  private el(testId: string): HTMLElement {
    const element = this.root.querySelector<HTMLElement>(`[data-testid="${testId}"]`);
    if (!element) throw new Error(`missing element ${testId}`);
    return element;
  }

  private text(testId: string, value: string): void {
    this.el(testId).textContent = value;
  }
}

function productCard(side: 'a' | 'b', title: string, image: string | undefined): string {
  const img = image
    ? `<img data-testid="image-${side}" src="${escapeAttr(image)}" alt="">`
    : `<div class="image-placeholder" data-testid="image-placeholder">no image</div>`;
  return `
    <figure class="product">
      ${img}
      <figcaption data-testid="title-${side}">${escapeHtml(title)}</figcaption>
    </figure>`;
}

function escapeHtml(value: string): string {
  return value
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;');
}

function escapeAttr(value: string): string {
  return escapeHtml(value).replaceAll('"', '&quot;');
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.message;
  return error instanceof Error ? error.message : String(error);
}
