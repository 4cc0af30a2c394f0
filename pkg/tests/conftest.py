"""Shared fixtures: the aseptic-deficiency fixture corpus and helpers."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gmpilot.agent import MockBackend
from gmpilot.engine import Engine

# One regulation section per document so each becomes exactly one chunk.
REGULATORY_SECTIONS = [
    {
        "title": "21 CFR 211.42 Design and construction features",
        "body": (
            "Sec. 211.42 Design and construction features. Any building or buildings used in the "
            "manufacture, processing, packing, or holding of a drug product shall be of suitable "
            "size, construction, and location to facilitate cleaning, maintenance, and proper "
            "operations. There shall be separate or defined areas for the firm's operations, "
            "including aseptic processing areas with smooth, hard surfaces, temperature and "
            "humidity controls, and an air supply filtered through high-efficiency particulate "
            "air filters under positive pressure."
        ),
    },
    {
        "title": "21 CFR 211.46 Ventilation, air filtration, air heating and cooling",
        "body": (
            "Sec. 211.46 Ventilation, air filtration, air heating and cooling. Adequate "
            "ventilation shall be provided. Equipment for adequate control over air pressure, "
            "micro-organisms, dust, humidity, and temperature shall be provided when appropriate. "
            "Air filtration systems, including prefilters and particulate matter air filters, "
            "shall be used when appropriate on air supplies to production areas. The design of "
            "aseptic processing areas shall include air handling systems under positive pressure."
        ),
    },
    {
        "title": "21 CFR 211.100 Written procedures; deviations",
        "body": (
            "Sec. 211.100 Written procedures; deviations. There shall be written procedures for "
            "production and process control designed to assure that the drug products have the "
            "identity, strength, quality, and purity they purport or are represented to possess, "
            "including procedures to prevent objectionable contamination. These written "
            "procedures, including any changes, shall be drafted, reviewed, and approved by the "
            "appropriate organizational units. Any deviations from the written procedures shall "
            "be recorded and justified."
        ),
    },
    {
        "title": "21 CFR 211.113 Control of microbiological contamination",
        "body": (
            "Sec. 211.113 Control of microbiological contamination. Appropriate written "
            "procedures, designed to prevent microbiological contamination of drug products "
            "purporting to be sterile, shall be established and followed. Such control procedures "
            "shall include validation of all aseptic and sterilization processes, and any "
            "deviations shall be investigated and documented."
        ),
    },
    {
        "title": "21 CFR 211.22 Responsibilities of quality control unit",
        "body": (
            "Sec. 211.22 Responsibilities of quality control unit. There shall be a quality "
            "control unit that has the responsibility and authority to approve or reject all "
            "components, drug product containers, closures, in-process materials, packaging "
            "material, labeling, and drug products. Adequate laboratory facilities shall be "
            "available. The responsibilities and procedures applicable to the quality control "
            "unit shall be in writing and fully followed."
        ),
    },
    {
        "title": "21 CFR 211.165 Testing and release for distribution",
        "body": (
            "Sec. 211.165 Testing and release for distribution. For each batch of drug product, "
            "there shall be appropriate laboratory determination of satisfactory conformance to "
            "final specifications prior to release, including the identity and strength of each "
            "active ingredient. Batches failing to meet established standards shall be rejected."
        ),
    },
    {
        "title": "21 CFR 314.50 Content and format of an application",
        "body": (
            "Sec. 314.50 Content and format of an application. Submissions must include a summary "
            "of the technical sections, chemistry, manufacturing, and controls information, "
            "nonclinical pharmacology and toxicology, human pharmacokinetics and bioavailability, "
            "and proposed labeling for the drug product."
        ),
    },
    {
        "title": "21 CFR 211.192 Production record review",
        "body": (
            "Sec. 211.192 Production record review. All drug product production and control "
            "records shall be reviewed and approved by the quality control unit to determine "
            "compliance with all established, approved written procedures before a batch is "
            "released or distributed. Any unexplained discrepancy shall be thoroughly "
            "investigated, and the investigation shall extend to other batches of the same drug "
            "product."
        ),
    },
]

FORM483_ACME = """TITLE: FDA Form 483, Acme Pharma aseptic line
FIRM: Acme Pharma, Inc.
INSPECTOR: Smith, Jane
INSPECTOR: Robert Chen
VERIFIED: true
===OBS===
Observation 1: The environmental monitoring program for the aseptic processing area is
deficient. Specifically, there is a deficiency in the frequency of viable air and surface
sampling, and alert and action limits fail to ensure adequate control of microbiological
quality, as required by 21 CFR 211.42 and 211.113(b).
===OBS===
Observation 2: Smoke studies for the aseptic filling line do not demonstrate unidirectional
airflow, and the monitoring of personnel during interventions shows inadequate environmental
control. This deficiency in aseptic technique creates contamination risk contrary to
21 CFR 211.113.
===OBS===
Observation 3: Laboratory records lack complete data for batch release decisions; audit
trails in the chromatography data system are not reviewed, contrary to 21 CFR 211.194.
"""

FORM483_ACME_SECOND = """TITLE: FDA Form 483, Acme Pharma packaging site
FIRM: ACME PHARMA
INSPECTOR: Jane Smith
VERIFIED: true
===OBS===
Observation 1: Written procedures for handling production deviations were not followed for
three batches, contrary to 21 CFR 211.100(a).
===OBS===
Observation 2: The firm failed to establish an adequate corrective and preventive action
system; CAPA effectiveness checks are not performed after implementation. See 21 CFR 211.192.
"""

QA_PAIRS = [
    {
        "question": "What is a CAPA and when is one required?",
        "answer": (
            "A corrective and preventive action plan addresses the root cause of a deviation "
            "or nonconformity. One is required whenever an investigation confirms a systemic "
            "quality issue, such as a failed environmental monitoring trend."
        ),
    },
    {
        "question": "How should a firm prepare for a re-inspection after an aseptic finding?",
        "answer": (
            "Close the original observations with documented corrective actions, verify "
            "effectiveness with data, re-train personnel, and run a mock audit of the aseptic "
            "area before the inspection date."
        ),
    },
]

QUERY_REGULATIONS_DESIGN = "aseptic processing design construction ventilation air"
QUERY_REGULATIONS_CONTROL = "microbiological contamination control written procedures deviations"
QUERY_CASES = "aseptic control deficiency environmental monitoring"

SCENARIO_QUERY = (
    "for aseptic control deficiency, write a brief preparation and CAPA for the FDA "
    "re-inspection, if FDA re-inspection results are not satisfied, product recall may be "
    "triggered"
)

PLANNING_REPLY = (
    "THOUGHT: This needs the relevant regulations, similar historical findings, and a "
    "structured brief.\n"
    f'ACTION: retrieve(corpus=regulations, query="{QUERY_REGULATIONS_DESIGN}")\n'
    f'ACTION: retrieve(corpus=regulations, query="{QUERY_REGULATIONS_CONTROL}")\n'
    f'ACTION: retrieve(corpus=cases, query="{QUERY_CASES}")\n'
    "FINAL: synthesize"
)


def build_fixture_engine(data_dir: Path, **engine_kwargs) -> Engine:
    """Ingest the fixture corpus into a fresh engine rooted at data_dir."""
    engine = Engine(data_dir, **engine_kwargs)
    regulatory = "\n".join(json.dumps(d) for d in REGULATORY_SECTIONS)
    engine.ingest_payload("regulatory", regulatory)
    engine.ingest_payload("form483", FORM483_ACME)
    engine.ingest_payload("form483", FORM483_ACME_SECOND)
    engine.ingest_payload("qa", "\n".join(json.dumps(p) for p in QA_PAIRS))
    return engine


def chunk_id_by_marker(engine: Engine, marker: str) -> str:
    """Find the unique chunk whose text contains the marker string."""
    matches = [c.chunk_id for c in engine.snapshot.chunks.values() if marker in c.text]
    assert len(matches) == 1, f"marker {marker!r} matched {len(matches)} chunks"
    return matches[0]


def scenario_chunk_ids(engine: Engine) -> dict[str, str]:
    return {
        "211.42": chunk_id_by_marker(engine, "Sec. 211.42"),
        "211.46": chunk_id_by_marker(engine, "Sec. 211.46"),
        "211.100": chunk_id_by_marker(engine, "Sec. 211.100"),
        "211.113": chunk_id_by_marker(engine, "Sec. 211.113"),
        "obs_env_monitoring": chunk_id_by_marker(engine, "Observation 1: The environmental"),
        "obs_smoke_studies": chunk_id_by_marker(engine, "Observation 2: Smoke studies"),
    }


def synthesis_reply(ids: dict[str, str]) -> str:
    payload = {
        "regulatory_basis": [
            {"chunk_id": ids["211.42"], "excerpt": "Separate defined areas for aseptic processing with filtered air supply."},
            {"chunk_id": ids["211.46"], "excerpt": "Adequate ventilation and air filtration under positive pressure."},
            {"chunk_id": ids["211.100"], "excerpt": "Written production and process control procedures; deviations recorded and justified."},
            {"chunk_id": ids["211.113"], "excerpt": "Written procedures to prevent microbiological contamination; validated aseptic processes."},
        ],
        "precedents": [
            {"chunk_id": ids["obs_env_monitoring"], "summary": "Deficient environmental monitoring of an aseptic processing area."},
            {"chunk_id": ids["obs_smoke_studies"], "summary": "Smoke studies failed to demonstrate unidirectional airflow during interventions."},
        ],
        "checklist": [
            {
                "risk": "Aseptic area design and air handling may not prevent contamination",
                "action": "Verify HEPA filtration, pressure differentials, and smoke-study coverage before the re-inspection",
                "citations": [ids["211.42"], ids["211.46"]],
            },
            {
                "risk": "Microbiological control procedures may be incomplete or unvalidated",
                "action": "Revalidate aseptic processes and update written contamination-control procedures",
                "citations": [ids["211.113"], ids["211.100"]],
            },
            {
                "risk": "Environmental monitoring gaps mirror prior inspection findings",
                "action": "Close the monitoring CAPA with effectiveness data and trend reviews",
                "citations": [ids["obs_env_monitoring"], ids["obs_smoke_studies"]],
            },
        ],
        "disclaimer": "Prepared from retrieved regulatory text and inspection records; confirm with the quality unit.",
    }
    return "FINAL: " + json.dumps(payload, ensure_ascii=False)


def scenario_script(ids: dict[str, str]) -> list[dict]:
    return [
        {"expect_marker": "== TASK PLANNING ==", "reply": PLANNING_REPLY},
        {"expect_marker": "== SYNTHESIS ==", "reply": synthesis_reply(ids)},
    ]


@pytest.fixture(scope="session")
def fixture_engine(tmp_path_factory) -> Engine:
    data_dir = tmp_path_factory.mktemp("corpus")
    return build_fixture_engine(data_dir)


@pytest.fixture()
def scenario(fixture_engine) -> tuple[Engine, dict[str, str]]:
    """Engine preloaded with the fixture corpus plus a fresh scenario script."""
    ids = scenario_chunk_ids(fixture_engine)
    fixture_engine.backend = MockBackend(scenario_script(ids))
    return fixture_engine, ids
