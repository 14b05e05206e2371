"""External codec driven through encode/decode command templates."""

import asyncio
import logging
import shlex
import shutil
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

import aiofiles

from ..config import settings
from ..data.images import ImageBuffer, SUPPORTED_SUFFIXES, decode_image_bytes, encode_image_bytes
from ..errors import CodecError
from ..models import CodecSpec
from .base import BaseCodec, CodecResult

logger = logging.getLogger(__name__)


def build_command(template: str, values: Dict[str, str]) -> List[str]:
    """Split ``template`` into argv first, then fill placeholders inside each token.

    Splitting before substitution keeps paths containing spaces in one
    argument; no shell is involved.
    """
    argv = []
    for token in shlex.split(template):
        for key, value in values.items():
            token = token.replace("{" + key + "}", value)
        argv.append(token)
    return argv


def _transcript(argv: List[str], returncode: Optional[int], stdout: bytes, stderr: bytes) -> str:
    lines = [f"$ {shlex.join(argv)}", f"exit status: {returncode}"]
    if stdout:
        lines.append("stdout:\n" + stdout.decode("utf-8", errors="replace").rstrip())
    if stderr:
        lines.append("stderr:\n" + stderr.decode("utf-8", errors="replace").rstrip())
    return "\n".join(lines)


async def run_command(argv: List[str], timeout: Optional[float] = None) -> str:
    """Run one command without a shell; nonzero exit raises with the transcript."""
    timeout = timeout or settings.CODEC_TIMEOUT
    try:
        process = await asyncio.create_subprocess_exec(
            *argv,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
        )
    except OSError as e:
        raise CodecError(f"cannot start {argv[0]!r}: {e}", transcript=f"$ {shlex.join(argv)}") from e

    try:
        stdout, stderr = await asyncio.wait_for(process.communicate(), timeout=timeout)
    except asyncio.TimeoutError:
        process.kill()
        await process.wait()
        raise CodecError(f"command timed out after {timeout}s", transcript=f"$ {shlex.join(argv)}")

    transcript = _transcript(argv, process.returncode, stdout, stderr)
    logger.debug(transcript)
    if process.returncode != 0:
        raise CodecError(f"command exited with status {process.returncode}", transcript=transcript)
    return transcript


class ExternalCodec(BaseCodec):
    """Runs host codec binaries; each job uses its own temporary directory."""

    name = "external"
    display_name = "External codec"

    def __init__(self, spec: CodecSpec):
        for suffix in (spec.input_suffix, spec.output_suffix):
            if suffix.lower() not in SUPPORTED_SUFFIXES:
                raise CodecError(f"{spec.name}: image suffix {suffix!r} is not supported")
        self.spec = spec
        self.name = spec.name
        self.description = f"{spec.encode_template} / {spec.decode_template}"
        self.qp_range = tuple(spec.qp_range)
        self.size_decreases_with_qp = spec.size_decreases_with_qp

    async def run(self, image: ImageBuffer, qp: int, workdir: Optional[Path] = None) -> CodecResult:
        base = Path(workdir or settings.WORK_DIR).resolve()
        base.mkdir(parents=True, exist_ok=True)
        job_dir = Path(tempfile.mkdtemp(prefix=f"{self.name}-qp{qp}-", dir=base))
        spec = self.spec
        source = job_dir / f"input{spec.input_suffix}"
        bitstream = job_dir / f"stream{spec.bitstream_suffix}"
        decoded_path = job_dir / f"decoded{spec.output_suffix}"

        try:
            image_format = SUPPORTED_SUFFIXES[spec.input_suffix.lower()]
            async with aiofiles.open(source, "wb") as f:
                await f.write(encode_image_bytes(image, image_format))

            encode = build_command(
                spec.encode_template,
                {"input": str(source), "output": str(bitstream), "qp": str(qp)},
            )
            transcript = await run_command(encode)
            if not bitstream.exists():
                raise CodecError(f"{self.name}: encoder produced no bitstream", transcript=transcript)
            bits = 8 * bitstream.stat().st_size

            decode = build_command(
                spec.decode_template,
                {"input": str(bitstream), "output": str(decoded_path)},
            )
            transcript += "\n" + await run_command(decode)
            if not decoded_path.exists():
                raise CodecError(f"{self.name}: decoder produced no image", transcript=transcript)

            async with aiofiles.open(decoded_path, "rb") as f:
                payload = await f.read()
            decoded = decode_image_bytes(payload, str(decoded_path))
            return self.create_result(decoded, bits, qp, transcript=transcript)
        finally:
            shutil.rmtree(job_dir, ignore_errors=True)
