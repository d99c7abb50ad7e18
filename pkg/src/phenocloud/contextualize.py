"""Instance contextualization: fetch the requested-applications metadata,
build an install plan, download archives and run installer scripts in order.

Execution is sandboxed under a caller-supplied root directory; scripts run
unprivileged with APP_NAME / APP_VERSION / APP_ARCHIVE / INSTALL_PREFIX in
their environment.  Dry-run mode resolves everything and touches nothing.
"""

from __future__ import annotations

import json
import os
import subprocess
import time
import urllib.request
from dataclasses import dataclass, field

from phenocloud.catalog import Catalog
from phenocloud.errors import PhenocloudError
from phenocloud.resolver import InstallPlan, resolve


class FetchError(PhenocloudError):
    """Metadata source unreachable or unreadable."""


class MetadataFormatError(PhenocloudError):
    """Metadata payload is not a JSON object of app name -> version key."""


class DownloadError(PhenocloudError):
    """Archive download failed."""


@dataclass(frozen=True)
class MetadataSource:
    kind: str  # "fixed-url" | "local-file"
    location: str

    def __post_init__(self):
        if self.kind not in ("fixed-url", "local-file"):
            raise ValueError(f"unknown metadata source kind {self.kind!r}")
        if not self.location:
            raise ValueError("metadata source location must be non-empty")


@dataclass
class StepReport:
    app: str
    version: str
    download: str  # "cached" | "downloaded" | "skipped" | "failed" | "dry-run"
    download_url: str | None
    exit_status: int | None  # None when the script did not run
    duration_s: float
    output: str = ""

    def to_dict(self):
        return {
            "app": self.app,
            "version": self.version,
            "download": self.download,
            "download_url": self.download_url,
            "exit_status": self.exit_status,
            "duration_s": round(self.duration_s, 3),
        }


@dataclass
class ExecutionReport:
    steps: list = field(default_factory=list)
    failed_at: int | None = None  # step index, None = success
    dry_run: bool = False

    @property
    def ok(self):
        return self.failed_at is None

    def to_dict(self):
        return {
            "overall": "success" if self.ok else f"failed-at({self.failed_at})",
            "dry_run": self.dry_run,
            "steps": [s.to_dict() for s in self.steps],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    properties: dict = field(default_factory=dict)


def filter_ready_images(images) -> list:
    """Images flagged ready for contextualization: property feynapps == "true"."""
    return [img for img in images if img.properties.get("feynapps") == "true"]


def fetch_metadata(source: MetadataSource) -> dict:
    """Read the instance metadata payload and parse the install request."""
    try:
        if source.kind == "local-file":
            with open(source.location, encoding="utf-8") as fh:
                text = fh.read()
        else:
            with urllib.request.urlopen(source.location) as resp:
                text = resp.read().decode("utf-8")
    except OSError as exc:
        raise FetchError(f"cannot fetch metadata from {source.location}: {exc}") from exc

    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MetadataFormatError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in payload.items()
    ):
        raise MetadataFormatError(
            "metadata must be a JSON object mapping app name to version key"
        )
    return payload


def _cache_manifest_path(downloads_dir):
    return os.path.join(downloads_dir, ".cache.json")


def _load_cache(downloads_dir) -> dict:
    try:
        with open(_cache_manifest_path(downloads_dir), encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return {}


def _save_cache(downloads_dir, cache):
    with open(_cache_manifest_path(downloads_dir), "w", encoding="utf-8") as fh:
        json.dump(cache, fh)


def _download(url: str, dest: str, cache: dict) -> str:
    """Fetch url into dest unless a cached copy with matching size exists.

    Returns "cached" or "downloaded".
    """
    entry = cache.get(url)
    if (
        entry
        and entry.get("path") == dest
        and os.path.exists(dest)
        and os.path.getsize(dest) == entry.get("size")
    ):
        return "cached"
    try:
        with urllib.request.urlopen(url) as resp, open(dest, "wb") as out:
            while True:
                chunk = resp.read(1 << 16)
                if not chunk:
                    break
                out.write(chunk)
    except OSError as exc:
        raise DownloadError(f"download of {url} failed: {exc}") from exc
    cache[url] = {"path": dest, "size": os.path.getsize(dest)}
    return "downloaded"


class Contextualizer:
    def __init__(self, catalog: Catalog, scripts_dir: str, root: str):
        self.catalog = catalog
        self.scripts_dir = scripts_dir
        self.root = root

    def plan(self, request: dict) -> InstallPlan:
        return resolve(self.catalog, request)

    def run(self, request: dict, dry_run: bool = False) -> ExecutionReport:
        plan = self.plan(request)
        report = ExecutionReport(dry_run=dry_run)
        if dry_run:
            for step in plan.steps:
                report.steps.append(
                    StepReport(
                        app=step.name,
                        version=step.version_key,
                        download="dry-run",
                        download_url=step.download_url,
                        exit_status=None,
                        duration_s=0.0,
                    )
                )
            return report

        downloads_dir = os.path.join(self.root, "downloads")
        os.makedirs(downloads_dir, exist_ok=True)
        cache = _load_cache(downloads_dir)
        for index, step in enumerate(plan.steps):
            result = self._run_step(step, downloads_dir, cache)
            report.steps.append(result)
            if result.exit_status != 0:
                report.failed_at = index
                break
        _save_cache(downloads_dir, cache)
        return report

    def _run_step(self, step, downloads_dir, cache) -> StepReport:
        start = time.monotonic()
        archive = None
        download = "skipped"
        if step.download_url:
            archive = os.path.join(
                downloads_dir, os.path.basename(step.download_url.rstrip("/"))
            )
            try:
                download = _download(step.download_url, archive, cache)
            except DownloadError as exc:
                return StepReport(
                    app=step.name,
                    version=step.version_key,
                    download="failed",
                    download_url=step.download_url,
                    exit_status=None,
                    duration_s=time.monotonic() - start,
                    output=str(exc),
                )

        script = os.path.join(self.scripts_dir, step.effective["installer"])
        prefix = os.path.join(self.root, "apps", step.name, step.version_key)
        env = dict(os.environ)
        env.update(
            APP_NAME=step.name,
            APP_VERSION=step.version_key,
            APP_ARCHIVE=archive or "",
            INSTALL_PREFIX=prefix,
        )
        proc = subprocess.run(
            ["/bin/sh", script],
            cwd=self.root,
            env=env,
            capture_output=True,
            text=True,
        )
        return StepReport(
            app=step.name,
            version=step.version_key,
            download=download,
            download_url=step.download_url,
            exit_status=proc.returncode,
            duration_s=time.monotonic() - start,
            output=proc.stdout + proc.stderr,
        )


def contextualize(
    catalog: Catalog,
    source: MetadataSource,
    root: str,
    scripts_dir: str,
    dry_run: bool = False,
) -> ExecutionReport:
    """Fetch metadata, plan, download and install; stops at first failure."""
    request = fetch_metadata(source)
    ctx = Contextualizer(catalog, scripts_dir=scripts_dir, root=root)
    return ctx.run(request, dry_run=dry_run)
