import os
import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)
        cmakedir = subprocess.check_output(
            [sys.executable, "-m", "pybind11", "--cmakedir"], text=True
        ).strip()
        subprocess.check_call(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                "-DONSETNET_BUILD_PYTHON=ON",
                "-DONSETNET_BUILD_TESTS=OFF",
                "-DONSETNET_BUILD_CLI=OFF",
                f"-Dpybind11_DIR={cmakedir}",
                f"-DPython_EXECUTABLE={sys.executable}",
            ]
        )
        subprocess.check_call(
            ["cmake", "--build", str(build_dir), "--target", "onsetnet_py",
             f"-j{os.cpu_count() or 1}"]
        )
        package_dir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        package_dir.mkdir(parents=True, exist_ok=True)
        for lib in (build_dir / "python" / "onsetnet").glob("_core*"):
            shutil.copy2(lib, package_dir / lib.name)


setup(
    ext_modules=[CMakeExtension("onsetnet._core")],
    cmdclass={"build_ext": CMakeBuild},
)
