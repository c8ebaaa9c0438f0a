/**
 * Browser bootstrap: read runtime config, ask for a rater id, mount the
 * console. The service base URL defaults to same-origin (the annotation
 * service can serve this bundle directly).
 */
import { AnnotationApi } from './api.js';
import { ReviewConsole } from './console.js';

interface RuntimeConfig {
  baseUrl?: string;
  pollIntervalMs?: number;
}

async function loadConfig(): Promise<RuntimeConfig> {
  const inline = (window as unknown as { MIND_CONSOLE_CONFIG?: RuntimeConfig }).MIND_CONSOLE_CONFIG;
  if (inline) return inline;
  try {
    const response = await fetch('config.json');
    if (response.ok) return (await response.json()) as RuntimeConfig;
  } catch {
    // fall through to same-origin defaults
  }
  return {};
}

function mount(config: RuntimeConfig, raterId: string): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app mount point');
  const api = new AnnotationApi(config.baseUrl ?? '');
  const consoleApp = new ReviewConsole(root, api, {
    raterId,
    pollIntervalMs: config.pollIntervalMs ?? 5000,
  });
  void consoleApp.start();
}

async function boot(): Promise<void> {
  const config = await loadConfig();
  const form = document.getElementById('rater-form') as HTMLFormElement;
  const input = document.getElementById('rater-id') as HTMLInputElement;
  input.value = localStorage.getItem('raterId') ?? '';
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const raterId = input.value.trim();
    if (!raterId) return;
    localStorage.setItem('raterId', raterId);
    form.hidden = true;
    mount(config, raterId);
  });
}

void boot();
