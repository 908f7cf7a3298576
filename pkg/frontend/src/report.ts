import type { Report } from './types.js';

export interface ReportView {
  editable: boolean;
  displayText: string;
  machineText: string;
  showMachineToggle: boolean;
  statusLabel: string;
}

/** Pure view model for the report editor; approved reports are read-only. */
export function deriveReportView(report: Report): ReportView {
  const approved = report.status === 'approved';
  const edited = report.edited_text != null && report.edited_text !== '';
  return {
    editable: !approved,
    displayText: approved && edited ? (report.edited_text as string) : report.text,
    machineText: report.text,
    showMachineToggle: approved && edited,
    statusLabel: approved ? 'approved (read-only)' : 'draft',
  };
}

export function findingsRows(report: Report): Array<[string, string]> {
  const rows: Array<[string, string]> = [];
  const { onh, macula, vessels } = report.sections;
  if (onh) {
    rows.push(['ONH shape', `${onh.shape} (eccentricity ${onh.eccentricity.toFixed(2)})`]);
    rows.push(['ONH diameter', `${onh.disc_diameter_px.toFixed(1)} px`]);
    rows.push(['ONH confidence', onh.confidence.toFixed(2)]);
  } else {
    rows.push(['ONH', 'not assessed']);
  }
  if (macula) {
    rows.push(['Macular reflex', `${macula.reflex} (ratio ${macula.reflex_ratio.toFixed(2)})`]);
  } else {
    rows.push(['Macula', 'not assessed']);
  }
  if (vessels) {
    rows.push(['Artery caliber', vessels.caliber]);
    rows.push(['A/V ratio', vessels.avr.toFixed(2)]);
    rows.push([
      'Normalized caliber',
      vessels.normalized_artery_caliber == null
        ? 'unavailable'
        : vessels.normalized_artery_caliber.toFixed(3),
    ]);
  } else {
    rows.push(['Vessels', 'not assessed']);
  }
  return rows;
}
