import json

import pytest

from eyas.classifier import MaculaFindings, OnhFindings, VesselFindings
from eyas.errors import EmptyReportError, StateError, ValidationError
from eyas.reporter import ReportDraft, approve, render_export, synthesize

BACKEND = "builtin@1.0.0"


def onh(shape="round", ecc=0.21):
    return OnhFindings(shape=shape, eccentricity=ecc, disc_diameter_px=70.0,
                       source_backend=BACKEND, confidence=0.9)


def macula(reflex="present"):
    return MaculaFindings(reflex=reflex, reflex_ratio=1.3, source_backend=BACKEND)


def vessels(caliber="normal", avr=0.67):
    nac = None if caliber == "indeterminate" else 0.07
    return VesselFindings(avr=avr, normalized_artery_caliber=nac, caliber=caliber,
                          source_backend=BACKEND)


class TestSynthesize:
    def test_reference_sentence(self):
        report = synthesize(onh=onh(), macula=macula(), vessels=vessels())
        assert report.text == (
            "Optic disc: round shape (eccentricity 0.21). "
            "Macula: foveal reflex present. "
            "Vessels: artery caliber normal; artery-to-vein ratio 0.67."
        )

    def test_absent_section(self):
        report = synthesize(onh=onh(), macula=macula())
        assert report.text.endswith("Vessels: not assessed.")

    def test_indeterminate_caliber_sentence(self):
        report = synthesize(vessels=vessels("indeterminate", avr=0.7))
        assert (
            "Vessels: caliber not normalized (optic disc unavailable); "
            "artery-to-vein ratio 0.70." in report.text
        )

    def test_deterministic(self):
        a = synthesize(onh=onh(), macula=macula(), vessels=vessels(), image_id="i")
        b = synthesize(onh=onh(), macula=macula(), vessels=vessels(), image_id="i")
        assert a.text.encode() == b.text.encode()
        assert a.report_id == b.report_id

    def test_empty_error(self):
        with pytest.raises(EmptyReportError):
            synthesize()

    def test_provenance_populated(self):
        report = synthesize(onh=onh(), vessels=vessels())
        assert set(report.provenance) == {"onh", "vessels"}
        assert report.provenance["onh"].backend == BACKEND

    def test_shape_phrases(self):
        assert "vertically oval shape" in synthesize(onh=onh("oval_vertical", 0.64)).text
        assert "horizontally oval shape" in synthesize(onh=onh("oval_horizontal", 0.8)).text


class TestApprove:
    def test_approve_freezes(self):
        draft = synthesize(onh=onh())
        done = approve(draft)
        assert done.status.value == "approved"
        assert done.text == draft.text
        assert done.final_text == draft.text

    def test_approve_with_edit_keeps_original(self):
        draft = synthesize(onh=onh())
        done = approve(draft, edited_text="Reviewed and amended.")
        assert done.edited_text == "Reviewed and amended."
        assert done.text == draft.text  # machine text retained for audit
        assert done.final_text == "Reviewed and amended."

    def test_double_approve_rejected(self):
        done = approve(synthesize(onh=onh()))
        with pytest.raises(StateError):
            approve(done)


class TestExport:
    def test_txt_export(self):
        report = synthesize(onh=onh(), macula=macula(), vessels=vessels())
        data = render_export(report, "txt")
        assert data.decode("utf-8") == report.text + "\n"

    def test_txt_export_approved_edit(self):
        done = approve(synthesize(onh=onh()), edited_text="Final wording.")
        assert render_export(done, "txt") == b"Final wording.\n"

    def test_json_roundtrip(self):
        report = approve(synthesize(onh=onh(), macula=macula(), vessels=vessels(),
                                    image_id="abc123"), edited_text="x")
        back = ReportDraft.from_json(json.loads(render_export(report, "json")))
        assert back == report

    def test_unknown_format(self):
        with pytest.raises(ValidationError):
            render_export(synthesize(onh=onh()), "pdf")

    def test_unapproved_section_without_provenance_rejected(self):
        with pytest.raises(ValidationError):
            ReportDraft(report_id="r", image_id="i", onh=onh(), macula=None,
                        vessels=None, text="t", provenance={})
