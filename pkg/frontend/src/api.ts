import type { AnalysisResponse, BackendDescriptor, Report, StructurePayload } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function unwrap<T>(resp: Response): Promise<T> {
  if (resp.ok) return resp.json() as Promise<T>;
  let code = 'http';
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body?.error) {
      code = body.error.code;
      message = body.error.message;
    }
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(resp.status, code, message);
}

export class Api {
  constructor(private base: string = '') {}

  async submitAnalysis(file: Blob, laterality: string): Promise<string> {
    const resp = await fetch(`${this.base}/api/v1/analyses?laterality=${laterality}`, {
      method: 'POST',
      body: file,
    });
    const body = await unwrap<{ job_id: string }>(resp);
    return body.job_id;
  }

  getAnalysis(jobId: string): Promise<AnalysisResponse> {
    return fetch(`${this.base}/api/v1/analyses/${jobId}`).then((r) => unwrap<AnalysisResponse>(r));
  }

  getStructure(jobId: string, structure: string): Promise<StructurePayload> {
    return fetch(`${this.base}/api/v1/analyses/${jobId}/structures/${structure}`).then((r) =>
      unwrap<StructurePayload>(r),
    );
  }

  imageUrl(jobId: string): string {
    return `${this.base}/api/v1/analyses/${jobId}/image`;
  }

  async finalizeReport(jobId: string, editedText: string | null, approve: boolean): Promise<Report> {
    const resp = await fetch(`${this.base}/api/v1/analyses/${jobId}/report`, {
      method: 'PUT',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ edited_text: editedText, approve }),
    });
    return unwrap<Report>(resp);
  }

  async listBackends(): Promise<BackendDescriptor[]> {
    const body = await fetch(`${this.base}/api/v1/backends`).then((r) =>
      unwrap<{ backends: BackendDescriptor[] }>(r),
    );
    return body.backends;
  }
}
