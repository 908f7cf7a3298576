export type JobState = 'queued' | 'running' | 'done' | 'failed';
export type StructureState = 'pending' | 'ok' | 'failed' | 'skipped';
export type StructureName = 'onh' | 'macula' | 'vessels';

export interface JobRecord {
  job_id: string;
  image_id: string;
  laterality: string;
  state: JobState;
  structures: Record<StructureName, StructureState>;
  errors: Record<string, string>;
  created: string;
  updated: string;
  error: string | null;
}

export interface RoiBox {
  x: number;
  y: number;
  w: number;
  h: number;
  structure: string;
  confidence: number;
}

export interface OnhFindings {
  shape: string;
  eccentricity: number;
  disc_diameter_px: number;
  source_backend: string;
  confidence: number;
}

export interface MaculaFindings {
  reflex: string;
  reflex_ratio: number;
  source_backend: string;
}

export interface VesselFindings {
  avr: number;
  normalized_artery_caliber: number | null;
  caliber: string;
  source_backend: string;
}

export interface StructurePayload {
  structure: StructureName;
  roi: RoiBox | null;
  findings: OnhFindings | MaculaFindings | VesselFindings | null;
  mask: string;
  av_map?: string;
}

export interface Report {
  report_id: string;
  image_id: string;
  sections: {
    onh: OnhFindings | null;
    macula: MaculaFindings | null;
    vessels: VesselFindings | null;
  };
  text: string;
  status: 'draft' | 'approved';
  provenance: Record<string, { backend: string; timestamp: string }>;
  edited_text: string | null;
}

export interface AnalysisResponse {
  job: JobRecord;
  report: Report | null;
}

export interface BackendDescriptor {
  name: string;
  version: string;
  structure: string;
  kind: string;
  endpoint: string | null;
}
