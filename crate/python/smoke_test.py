"""Smoke test for the gcvt extension module.

Build first with `cargo build -p gcvt-python`, or point GCVT_LIB at the
shared library.
"""

import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    env = os.environ.get("GCVT_LIB")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        for name in ("libgcvt.so", "libgcvt.dylib", "gcvt.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("extension not built: run `cargo build -p gcvt-python`")


def import_gcvt(tmp):
    lib = find_library()
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, Path(tmp) / ("gcvt" + suffix))
    sys.path.insert(0, tmp)
    import gcvt

    return gcvt


def main():
    with tempfile.TemporaryDirectory() as tmp:
        gcvt = import_gcvt(tmp)
        assert "tiny-gcn" in gcvt.benchmarks()

        arch = gcvt.ArchConfig(n_pe=4)
        assert json.loads(arch.to_json())["n_pe"] == 4

        for name in gcvt.benchmarks():
            model = gcvt.Model.benchmark(name, 1)
            compiled = gcvt.compile(model, arch)
            report = gcvt.simulate(compiled, arch)
            ok, detail = gcvt.verify(model, compiled, report)
            assert ok, detail
            bd = report.breakdown()
            assert bd["Total"] == report.total_cycles > 0
            print(f"{name:14s} {compiled.tile_count:4d} tiles {report.total_cycles:8d} cycles")

        compiled = gcvt.compile(gcvt.Model.benchmark("tiny-cnn", 2))
        lines = gcvt.disassemble(bytes(compiled.program_bytes()))
        assert len(lines) == compiled.instruction_count
        out = Path(tmp) / "out"
        compiled.write(str(out))
        assert (out / "program.gcvi").exists()

        try:
            gcvt.Model.from_json("{")
        except ValueError:
            pass
        else:
            raise AssertionError("malformed model accepted")
    print("ok")


if __name__ == "__main__":
    main()
