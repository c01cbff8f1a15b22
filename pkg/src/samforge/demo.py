"""End-to-end demo: synthetic corpus, full topology, one project run.

Builds a legacy-export corpus (1000 files over 5 datasets, a handful of
convention-violating names), boots the whole deployment in one process
on ephemeral loopback ports - catalog, router station, two analysis
stations, two stores, project server - migrates the corpus, seeds both
stores with the file bytes, then drives a project over the 100-file
dataset with lockstep consumers, verifying every delivered path against
the catalog checksum.

Everything is deterministic under the given seed, so the demo doubles as
the end-to-end acceptance harness.
"""

from __future__ import annotations

import csv
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import CatalogClient, CatalogService
from .journal import Journal  # noqa: F401  (re-exported for durability harnesses)
from .migrate import load_export, run_migration, verify_migration
from .naming import ConventionViolation, parse_legacy_name
from .project import ProjectServer
from .station import EndpointSpec, StationConfig, StationService, start_station_data_server
from .store import StoreConfig, StoreService, start_store_data_server
from .transfer import crc32_bytes, crc32_file, put_to_store
from .wire import Client, format_addr, start_control_server

DEFAULT_SEED = 20030617

ROUTER = "fcdf-router"
ANALYSIS_1 = "cdfa-1"
ANALYSIS_2 = "cdfa-2"
STORE_RO = "cdfen-sim"
STORE_RW = "stken-sim"
SEEDER = "seeder"

# (stream, event_type, program_version, calibration_set, tier) per dataset
_DATASET_SHAPES = [
    ("b", "phy", 4, 11, "raw"),
    ("j", "min", 9, 2, "raw"),
    ("e", "ele", 12, 7, "prd"),
    ("m", "muo", 3, 30, "prd"),
    ("h", "had", 21, 5, "ntp"),
]

_MALFORMED_NAMES = [
    "0phy0411_fs9001_0001.raw",   # digit stream
    "bph0411_fs9001_0002.raw",    # prefix too short
    "bphy04_9002.raw",            # fileset segment missing
    "oops.raw",                   # nothing matches
    "bphy0411_fs901_0003.raw",    # 3-digit fileset
    "bphy0411_fs9001_004.raw",    # 3-digit sequence
    "bphy0411_fs9001_0005.xyz",   # unknown tier
    "BPHY0411_fs9001_0006.raw",   # uppercase stream
    "bphy0411fs9001_0007.raw",    # separator missing
    "bphy0411_fs9001_0008",       # extension missing
]


@dataclass
class Corpus:
    root: Path
    export_dir: Path
    content_dir: Path
    dataset_ids: list[str]
    project_dataset_id: str
    files_by_dataset: dict[str, list[str]] = field(default_factory=dict)

    @property
    def project_dataset(self) -> str:
        return f"dfc-{self.project_dataset_id}"


def make_corpus(root: str | Path, seed: int = DEFAULT_SEED, n_files: int = 1000,
                n_datasets: int = 5, n_malformed: int = 10,
                project_dataset_size: int = 100) -> Corpus:
    """Write a synthetic legacy export plus the file contents it describes."""
    if n_datasets > len(_DATASET_SHAPES):
        raise ValueError(f"at most {len(_DATASET_SHAPES)} datasets supported")
    root = Path(root)
    content_dir = root / "content"
    export_dir = root / "export"
    content_dir.mkdir(parents=True, exist_ok=True)
    export_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    dataset_ids = [str(101 + i) for i in range(n_datasets)]
    project_dataset_id = dataset_ids[-1]
    # the last dataset gets exactly the project files, all well formed;
    # the malformed names spread over the earlier datasets
    sizes = _split_evenly(n_files - project_dataset_size, n_datasets - 1)
    sizes.append(project_dataset_size)

    file_rows = []
    fileset_rows = []
    files_by_dataset: dict[str, list[str]] = {ds: [] for ds in dataset_ids}
    malformed_left = list(_MALFORMED_NAMES[:n_malformed])
    # spread the malformed names evenly over the non-project rows
    early_rows = n_files - project_dataset_size
    malformed_interval = max(1, early_rows // max(1, n_malformed))
    fileset_counter = 1
    row_key = 1

    for ds_index, (dataset_id, count) in enumerate(zip(dataset_ids, sizes)):
        stream, event_type, pv, cc, tier = _DATASET_SHAPES[ds_index]
        allow_malformed = dataset_id != project_dataset_id
        produced = 0
        while produced < count:
            fileset_number = fileset_counter
            fileset_id = f"fs{fileset_number:04d}"
            fileset_rows.append((fileset_id, dataset_id, f"tape-{fileset_number:04d}"))
            fileset_counter += 1
            batch = min(25, count - produced)
            for seq in range(batch):
                if allow_malformed and malformed_left and (row_key % malformed_interval == 0):
                    name = malformed_left.pop(0)
                else:
                    name = (f"{stream}{event_type}{pv:02d}{cc:02d}"
                            f"_fs{fileset_number:04d}_{seq:04d}.{tier}")
                size = rng.randrange(1024, 4097)
                data = rng.randbytes(size)
                (content_dir / name).write_bytes(data)
                comment = f"run {row_key} golden" if row_key % 3 == 0 else ""
                file_rows.append((name, size, fileset_id, dataset_id, comment,
                                  f"rk{row_key:06d}"))
                files_by_dataset[dataset_id].append(name)
                row_key += 1
                produced += 1
    if malformed_left:
        raise RuntimeError("corpus too small to place every malformed name")

    _write_csv(export_dir / "files.csv",
               ("file_name", "size_bytes", "fileset_id", "dataset_id",
                "dfc_comment", "dfc_row_key"), file_rows)
    _write_csv(export_dir / "filesets.csv",
               ("fileset_id", "dataset_id", "tape_label"), fileset_rows)
    _write_csv(export_dir / "datasets.csv", ("dataset_id", "description"),
               [(ds, f"synthetic dataset {ds}") for ds in dataset_ids])
    return Corpus(
        root=root,
        export_dir=export_dir,
        content_dir=content_dir,
        dataset_ids=dataset_ids,
        project_dataset_id=project_dataset_id,
        files_by_dataset=files_by_dataset,
    )


def _split_evenly(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


class DemoTopology:
    """The deployment diagram in one process: every daemon on loopback."""

    def __init__(self, root: str | Path, mount_latency_ms: int = 0,
                 cache_capacity_bytes: int = 64 * 1024 * 1024,
                 max_transfer_attempts: int = 3):
        self.root = Path(root)
        self.mount_latency_ms = mount_latency_ms
        self.cache_capacity_bytes = cache_capacity_bytes
        self.max_transfer_attempts = max_transfer_attempts
        self.servers = []
        self.stations: dict[str, StationService] = {}
        self.stores: dict[str, StoreService] = {}
        self.catalog_service: CatalogService | None = None
        self.project_service: ProjectServer | None = None
        self.catalog_addr = None
        self.project_addr = None
        self.station_control: dict[str, str] = {}
        self.station_data: dict[str, str] = {}
        self.store_data: dict[str, str] = {}

    def start(self) -> "DemoTopology":
        state = self.root / "state"
        endpoints = {ROUTER, ANALYSIS_1, ANALYSIS_2, STORE_RO, STORE_RW}
        self.catalog_service = CatalogService(state / "catalog.journal",
                                              known_endpoints=endpoints)
        self.catalog_addr = self._serve(self.catalog_service)

        store_access = {
            STORE_RO: {ROUTER: "read_only", ANALYSIS_1: "read_only",
                       ANALYSIS_2: "read_only", SEEDER: "read_write"},
            STORE_RW: {ROUTER: "read_write", ANALYSIS_1: "read_only",
                       ANALYSIS_2: "read_only", SEEDER: "read_write"},
        }
        for store_name in (STORE_RO, STORE_RW):
            service = StoreService(
                StoreConfig(
                    name=store_name,
                    capacity_bytes=10**10,
                    volume_capacity_bytes=256 * 1024,
                    access_matrix=store_access[store_name],
                    mount_latency_ms=self.mount_latency_ms,
                ),
                state / store_name,
            )
            self.stores[store_name] = service
            self._serve(service)
            data = start_store_data_server(service, ("127.0.0.1", 0))
            self.servers.append(data)
            self.store_data[store_name] = format_addr(data.bound_addr)

        station_endpoints = {
            ROUTER: [(STORE_RW, "read_write", 4), (STORE_RO, "read_only", 2)],
            ANALYSIS_1: [(STORE_RW, "read_only", 4), (STORE_RO, "read_only", 2),
                         (ROUTER, "read_write", 4), (ANALYSIS_2, "read_only", 4)],
            ANALYSIS_2: [(STORE_RW, "read_only", 4), (STORE_RO, "read_only", 2),
                         (ROUTER, "read_write", 4), (ANALYSIS_1, "read_only", 4)],
        }
        roles = {ROUTER: "router", ANALYSIS_1: "analysis", ANALYSIS_2: "analysis"}
        routes = {ROUTER: STORE_RW, ANALYSIS_1: ROUTER, ANALYSIS_2: ROUTER}
        for name, pairs in station_endpoints.items():
            specs = [
                EndpointSpec(
                    name=ep,
                    scheme="tape" if ep in self.stores else "stn",
                    access=access,
                    data_addr=self.store_data.get(ep, "127.0.0.1:0"),
                    max_concurrent_transfers=slots,
                )
                for ep, access, slots in pairs
            ]
            service = StationService(
                StationConfig(
                    name=name,
                    cache_dir=str(state / name),
                    cache_capacity_bytes=self.cache_capacity_bytes,
                    role=roles[name],
                    known_endpoints=specs,
                    max_transfer_attempts=self.max_transfer_attempts,
                    route_target=routes[name],
                ),
                self.catalog_addr,
            )
            self.stations[name] = service
            self.station_control[name] = self._serve(service)
            data = start_station_data_server(service, ("127.0.0.1", 0))
            self.servers.append(data)
            self.station_data[name] = format_addr(data.bound_addr)
        # station-to-station endpoints could not know their peers' ports
        # until every data server was bound; patch them now
        for service in self.stations.values():
            for spec in service.config.known_endpoints:
                if spec.name in self.station_data:
                    spec.data_addr = self.station_data[spec.name]

        self.project_service = ProjectServer(state / "project.journal", self.catalog_addr)
        self.project_addr = self._serve(self.project_service)
        return self

    def _serve(self, service) -> str:
        server = start_control_server(service, ("127.0.0.1", 0))
        self.servers.append(server)
        return format_addr(server.bound_addr)

    def catalog_client(self) -> CatalogClient:
        return CatalogClient(self.catalog_addr)

    def seed_stores(self, corpus: Corpus, store_names=(STORE_RO, STORE_RW)) -> int:
        """Copy every corpus file onto the given stores and record locations."""
        seeded = 0
        with self.catalog_client() as catalog:
            for content in sorted(corpus.content_dir.iterdir()):
                data = content.read_bytes()
                name = content.name
                record = catalog.get_file(name)
                parts = parse_legacy_name(name)
                fileset = 0 if isinstance(parts, ConventionViolation) else parts.fileset_number
                for store_name in store_names:
                    volume_id = put_to_store(self.store_data[store_name], SEEDER,
                                             name, fileset, data, crc32_bytes(data))
                    catalog.add_location(record.file_id, store_name, volume_id)
                seeded += 1
        return seeded

    def stop(self) -> None:
        for server in self.servers:
            server.shutdown()
            server.server_close()
        self.servers.clear()
        if self.project_service:
            self.project_service.close()
        for service in self.stations.values():
            service.close()
        for service in self.stores.values():
            service.close()
        if self.catalog_service:
            self.catalog_service.close()


def run_lockstep_consumers(topology: DemoTopology, project_name: str,
                           n_consumers: int = 4) -> list[dict]:
    """Pull a whole project dry with equal-rate consumers; returns transcript."""
    stations = [ANALYSIS_1, ANALYSIS_2]
    assignments = [(f"consumer-{i + 1}", stations[i % len(stations)])
                   for i in range(n_consumers)]
    barrier = threading.Barrier(n_consumers)
    transcript: list[dict] = []
    transcript_lock = threading.Lock()
    failures: list[BaseException] = []

    def consume(consumer_id: str, station_name: str) -> None:
        client = Client(topology.project_addr)
        catalog = topology.catalog_client()
        rounds = 0
        try:
            while True:
                try:
                    barrier.wait(timeout=120)
                except threading.BrokenBarrierError:
                    pass  # peers finished; run the tail unsynchronized
                result = client.call("next", project_name=project_name,
                                     consumer_id=consumer_id,
                                     station=topology.station_control[station_name])
                if result.get("end"):
                    break
                rounds += 1
                record = catalog.get_file(result["file_id"])
                crc_ok = crc32_file(result["path"]) == record.crc32
                with transcript_lock:
                    transcript.append({
                        "file_id": result["file_id"],
                        "file_name": result["file_name"],
                        "consumer": consumer_id,
                        "station": station_name,
                        "path": result["path"],
                        "crc_ok": crc_ok,
                        "round": rounds,
                    })
                client.call("release", project_name=project_name,
                            consumer_id=consumer_id,
                            file_id=result["file_id"], status="consumed")
        except BaseException as e:  # noqa: BLE001 - surfaced to the caller
            failures.append(e)
            barrier.abort()
        finally:
            try:
                barrier.abort()
            except Exception:  # noqa: BLE001
                pass
            client.close()
            catalog.close()

    threads = [threading.Thread(target=consume, args=pair, daemon=True)
               for pair in assignments]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=300)
    if failures:
        raise failures[0]
    return transcript


def run_demo(root: str | Path, seed: int = DEFAULT_SEED, n_consumers: int = 4,
             mount_latency_ms: int = 0, n_files: int = 1000) -> dict:
    """The full deployment replay; returns every measurable the checks need."""
    started = time.monotonic()
    root = Path(root)
    corpus = make_corpus(root / "corpus", seed=seed, n_files=n_files)
    topology = DemoTopology(root / "run", mount_latency_ms=mount_latency_ms)
    topology.start()
    try:
        export = load_export(corpus.export_dir)
        with topology.catalog_client() as catalog:
            report = run_migration(export, catalog, import_time=time.time(),
                                   content_dir=corpus.content_dir)
            divergences = verify_migration(export, catalog)
        seeded = topology.seed_stores(corpus)

        project_name = "demo-project"
        with Client(topology.project_addr) as project:
            project.call("start", project_name=project_name,
                         dataset_name=corpus.project_dataset)
            transcript = run_lockstep_consumers(topology, project_name, n_consumers)
            summary = project.call("stop", project_name=project_name)

        station_status = {name: service.station_status()
                          for name, service in topology.stations.items()}
        store_status = {name: service.status()
                        for name, service in topology.stores.items()}
    finally:
        topology.stop()

    return {
        "elapsed_s": time.monotonic() - started,
        "corpus": {
            "files": n_files,
            "datasets": corpus.dataset_ids,
            "project_dataset": corpus.project_dataset,
        },
        "migration": report.to_wire(),
        "divergences": divergences,
        "seeded": seeded,
        "transcript": transcript,
        "summary": summary,
        "stations": station_status,
        "stores": store_status,
    }


def check_demo_results(results: dict) -> list[str]:
    """Every end-to-end guarantee, as a list of human-readable failures."""
    problems = []
    transcript = results["transcript"]
    delivered = [t["file_id"] for t in transcript]
    if len(delivered) != len(set(delivered)):
        problems.append("a file was delivered more than once")
    snapshot_files = results["summary"]["snapshot_files"]
    if len(delivered) != snapshot_files:
        problems.append(
            f"delivered {len(delivered)} files, snapshot holds {snapshot_files}")
    if results["summary"]["undelivered"]:
        problems.append(f"undelivered remainder: {results['summary']['undelivered']}")
    counts = results["summary"]["delivered_counts"].values()
    if counts and max(counts) - min(counts) > 1:
        problems.append(f"per-consumer counts spread beyond 1: {sorted(counts)}")
    bad_crc = [t["file_name"] for t in transcript if not t["crc_ok"]]
    if bad_crc:
        problems.append(f"delivered paths failed checksum: {bad_crc[:5]}")
    if results["divergences"]:
        problems.append(f"migration diverged: {results['divergences'][:2]}")
    return problems
