"""Canonical ECG data model: lead identities, raw recordings, CSV ingestion,
unit conversion and lead-consistency validation."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SAMPLE_RATE_MIN_HZ = 50.0
SAMPLE_RATE_MAX_HZ = 2000.0


class LeadId(Enum):
    """The 12 standard leads in canonical order."""

    I = "I"
    II = "II"
    III = "III"
    aVR = "aVR"
    aVL = "aVL"
    aVF = "aVF"
    V1 = "V1"
    V2 = "V2"
    V3 = "V3"
    V4 = "V4"
    V5 = "V5"
    V6 = "V6"

    @property
    def order(self) -> int:
        return _LEAD_ORDER[self]


_LEAD_ORDER = {lead: i for i, lead in enumerate(LeadId)}

# The four limb leads derivable from I and II (Einthoven/Goldberger relations).
DERIVED_LEADS = (LeadId.III, LeadId.aVR, LeadId.aVL, LeadId.aVF)

# Electrically independent set sufficient to reconstruct all 12 leads.
INDEPENDENT_LEADS = frozenset(
    {LeadId.I, LeadId.II, LeadId.V1, LeadId.V2, LeadId.V3,
     LeadId.V4, LeadId.V5, LeadId.V6}
)


class DomainError(ValueError):
    """Invalid ECG domain data."""


class CsvError(DomainError):
    """CSV ingestion failure, carrying 1-based row/column position."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyCsv(CsvError):
    pass


class UnknownLead(CsvError):
    def __init__(self, name: str, column: int):
        super().__init__(f"unknown lead name {name!r} in header column {column}", row=1, column=column)
        self.name = name


class RaggedRow(CsvError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row} has {got} cells, expected {expected}", row=row)


class NonNumericCell(CsvError):
    def __init__(self, row: int, column: int, text: str):
        super().__init__(f"non-numeric cell {text!r} at row {row}, column {column}", row=row, column=column)


class MissingLeads(DomainError):
    """A required lead is absent."""


class InsufficientLeads(DomainError):
    """Present leads cannot be completed to the full 12-lead set."""


def _as_samples(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"lead samples must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EcgRecording:
    """Raw multi-lead ADC sample arrays plus acquisition parameters.

    adc_gain is in ADC units per millivolt; baseline is the ADC reading at
    zero volts.  Lead I must always be present.
    """

    sample_rate_hz: float
    adc_gain: float
    baseline: float
    leads: dict[LeadId, np.ndarray]

    def __post_init__(self):
        if not (SAMPLE_RATE_MIN_HZ <= self.sample_rate_hz <= SAMPLE_RATE_MAX_HZ):
            raise DomainError(
                f"sample_rate_hz must be in [{SAMPLE_RATE_MIN_HZ:g}, {SAMPLE_RATE_MAX_HZ:g}], "
                f"got {self.sample_rate_hz}"
            )
        if not self.adc_gain > 0:
            raise DomainError(f"adc_gain must be positive, got {self.adc_gain}")
        if not np.isfinite(self.baseline):
            raise DomainError("baseline must be finite")
        if LeadId.I not in self.leads:
            raise MissingLeads("lead I is required in every recording")
        converted = {lead: _as_samples(v) for lead, v in self.leads.items()}
        lengths = {arr.shape[0] for arr in converted.values()}
        if len(lengths) != 1:
            raise DomainError(f"all leads must have equal length, got lengths {sorted(lengths)}")
        if lengths == {0}:
            raise DomainError("leads must contain at least one sample")
        object.__setattr__(self, "leads", converted)

    @property
    def num_samples(self) -> int:
        return self.leads[LeadId.I].shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def present_leads(self) -> list[LeadId]:
        return sorted(self.leads, key=lambda l: l.order)


@dataclass(frozen=True)
class PhysicalSignal:
    """Millivolt-valued channels on a uniform time grid, canonical lead order."""

    sample_rate_hz: float
    channels: tuple[tuple[LeadId, np.ndarray], ...] = field(default_factory=tuple)

    def __post_init__(self):
        converted = []
        lengths = set()
        for lead, values in self.channels:
            arr = _as_samples(values)
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"lead {lead.value} contains non-finite values")
            lengths.add(arr.shape[0])
            converted.append((lead, arr))
        if len(lengths) > 1:
            raise DomainError(f"all channels must have equal length, got lengths {sorted(lengths)}")
        object.__setattr__(self, "channels", tuple(converted))

    @property
    def num_samples(self) -> int:
        return self.channels[0][1].shape[0] if self.channels else 0

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def lead_map(self) -> dict[LeadId, np.ndarray]:
        return dict(self.channels)

    def lead(self, lead_id: LeadId) -> np.ndarray:
        for lead, values in self.channels:
            if lead is lead_id:
                return values
        raise MissingLeads(f"lead {lead_id.value} not present")

    def has(self, lead_id: LeadId) -> bool:
        return any(lead is lead_id for lead, _ in self.channels)

    def matrix(self) -> np.ndarray:
        """Channel-major (num_channels, num_samples) view of the signal."""
        return np.stack([values for _, values in self.channels])


class LeadConfiguration(Enum):
    SINGLE_LEAD = "single_lead"
    TWELVE_LEAD = "twelve_lead"

    @property
    def input_channels(self) -> int:
        return 1 if self is LeadConfiguration.SINGLE_LEAD else 12


# JSON wire field carrying each lead's samples (capitalization is part of the
# wire contract: dataAVR, not dataAvr).
WIRE_FIELD_BY_LEAD = {
    LeadId.I: "dataI",
    LeadId.II: "dataII",
    LeadId.III: "dataIII",
    LeadId.aVR: "dataAVR",
    LeadId.aVL: "dataAVL",
    LeadId.aVF: "dataAVF",
    LeadId.V1: "dataV1",
    LeadId.V2: "dataV2",
    LeadId.V3: "dataV3",
    LeadId.V4: "dataV4",
    LeadId.V5: "dataV5",
    LeadId.V6: "dataV6",
}


_LEAD_BY_NAME = {lead.value: lead for lead in LeadId}


def parse_csv(text: str) -> dict[LeadId, np.ndarray]:
    """Parse a lead-per-column CSV into a lead map.

    First row is a header of lead names (I, II, ..., V6); each following row
    holds one sample per column.  Acquisition parameters are not part of the
    CSV and must be supplied separately.
    """
    lines = text.split("\n")
    # Tolerate a trailing newline and CRLF line endings.
    rows = [line.rstrip("\r") for line in lines]
    while rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise EmptyCsv("empty CSV input")

    header = [cell.strip() for cell in rows[0].split(",")]
    leads: list[LeadId] = []
    for col, name in enumerate(header, start=1):
        lead = _LEAD_BY_NAME.get(name)
        if lead is None:
            raise UnknownLead(name, col)
        if lead in leads:
            raise CsvError(f"duplicate lead {name!r} in header column {col}", row=1, column=col)
        leads.append(lead)

    columns: list[list[float]] = [[] for _ in leads]
    for row_no, line in enumerate(rows[1:], start=2):
        cells = [cell.strip() for cell in line.split(",")]
        if len(cells) != len(leads):
            raise RaggedRow(row_no, expected=len(leads), got=len(cells))
        for col_no, cell in enumerate(cells, start=1):
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCell(row_no, col_no, cell) from None
            if not np.isfinite(value):
                raise NonNumericCell(row_no, col_no, cell)
            columns[col_no - 1].append(value)

    return {lead: _as_samples(col) for lead, col in zip(leads, columns)}


def format_csv(leads: dict[LeadId, np.ndarray]) -> str:
    """Serialize a lead map back to the CSV layout accepted by parse_csv."""
    if not leads:
        raise DomainError("cannot format an empty lead map")
    ordered = sorted(leads, key=lambda l: l.order)
    lengths = {len(leads[lead]) for lead in ordered}
    if len(lengths) != 1:
        raise DomainError("all leads must have equal length")
    out = [",".join(lead.value for lead in ordered)]
    n = lengths.pop()
    for i in range(n):
        out.append(",".join(repr(float(leads[lead][i])) for lead in ordered))
    return "\n".join(out) + "\n"


def to_physical(rec: EcgRecording) -> PhysicalSignal:
    """Convert raw ADC samples to millivolts: mv = (raw - baseline) / adc_gain."""
    channels = []
    for lead in sorted(rec.leads, key=lambda l: l.order):
        mv = (rec.leads[lead] - rec.baseline) / rec.adc_gain
        channels.append((lead, mv))
    return PhysicalSignal(sample_rate_hz=rec.sample_rate_hz, channels=tuple(channels))


def _derived_formulas(i: np.ndarray, ii: np.ndarray) -> dict[LeadId, np.ndarray]:
    return {
        LeadId.III: ii - i,
        LeadId.aVR: -(i + ii) / 2.0,
        LeadId.aVL: i - ii / 2.0,
        LeadId.aVF: ii - i / 2.0,
    }


@dataclass(frozen=True)
class ConsistencyReport:
    """Samplewise deviations of present derived limb leads from their defining
    combinations of leads I and II."""

    tolerance_mv: float
    max_deviation_mv: dict[LeadId, float]
    passed: bool


def check_lead_consistency(sig: PhysicalSignal, tolerance_mv: float) -> ConsistencyReport:
    """Verify III = II - I, aVR = -(I+II)/2, aVL = I - II/2, aVF = II - I/2
    for whichever derived leads are present, samplewise within tolerance."""
    present = {lead for lead, _ in sig.channels}
    derived_present = [lead for lead in DERIVED_LEADS if lead in present]
    if derived_present and not {LeadId.I, LeadId.II} <= present:
        raise MissingLeads("leads I and II are required to check derived leads")
    if not derived_present:
        return ConsistencyReport(tolerance_mv=tolerance_mv, max_deviation_mv={}, passed=True)

    expected = _derived_formulas(sig.lead(LeadId.I), sig.lead(LeadId.II))
    deviations = {}
    for lead in derived_present:
        deviations[lead] = float(np.max(np.abs(sig.lead(lead) - expected[lead])))
    passed = all(dev <= tolerance_mv for dev in deviations.values())
    return ConsistencyReport(tolerance_mv=tolerance_mv, max_deviation_mv=deviations, passed=passed)


def complete_leads(sig: PhysicalSignal) -> PhysicalSignal:
    """Fill missing derived limb leads (III, aVR, aVL, aVF) from I and II.

    Requires the electrically independent set {I, II, V1..V6}; present leads
    are passed through untouched.
    """
    present = {lead for lead, _ in sig.channels}
    missing_independent = INDEPENDENT_LEADS - present
    if missing_independent:
        names = ", ".join(sorted(l.value for l in missing_independent))
        raise InsufficientLeads(f"cannot complete 12 leads, missing independent leads: {names}")

    if present >= set(LeadId):
        return sig

    derived = _derived_formulas(sig.lead(LeadId.I), sig.lead(LeadId.II))
    lead_map = sig.lead_map()
    for lead in DERIVED_LEADS:
        if lead not in lead_map:
            lead_map[lead] = derived[lead]
    channels = tuple((lead, lead_map[lead]) for lead in LeadId)
    return PhysicalSignal(sample_rate_hz=sig.sample_rate_hz, channels=channels)
