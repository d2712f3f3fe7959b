#!/usr/bin/env python3
"""
Build script for SceneMix
Creates a standalone command-line executable for Windows, Linux, and macOS
"""

import argparse
import platform
import shutil
import subprocess
import sys
from pathlib import Path

APP_NAME = "SceneMix"
ROOT = Path(__file__).resolve().parent
BUILD_ARTIFACTS = ("build", "dist", f"{APP_NAME}.spec")


def get_platform_name() -> str:
    """Get the current platform name."""
    system = platform.system()
    if system == "Windows":
        return "windows"
    elif system == "Darwin":
        return "macos"
    else:
        return "linux"


def get_output_path() -> Path:
    """Executable produced by PyInstaller for this platform."""
    suffix = ".exe" if platform.system() == "Windows" else ""
    return ROOT / "dist" / f"{APP_NAME}{suffix}"


def clean_build_dirs():
    """Remove PyInstaller output; source trees and the virtualenv are left alone."""
    for name in BUILD_ARTIFACTS:
        target = ROOT / name
        if target.is_dir():
            print(f"Cleaning {name}/...")
            shutil.rmtree(target)
        elif target.exists():
            print(f"Removing {name}...")
            target.unlink()


def pyinstaller_command() -> list[str]:
    return [
        sys.executable, "-m", "PyInstaller",
        f"--name={APP_NAME}",
        "--onefile",
        "--console",
        "--noconfirm",
        # Pillow is only imported for previews
        "--hidden-import=PIL.PngImagePlugin",
        "--collect-submodules=src",
        # the engine is numpy-only; keep optional heavy packages out of the bundle
        "--exclude-module=tkinter",
        "--exclude-module=matplotlib",
        str(ROOT / "run.py"),
    ]


def build_executable() -> Path:
    """Build the standalone executable and return its path."""
    print(f"\n{'='*50}")
    print(f"Building {APP_NAME} for {get_platform_name()}")
    print(f"{'='*50}\n")

    cmd = pyinstaller_command()
    print(f"Command: {' '.join(cmd)}\n")
    result = subprocess.run(cmd, cwd=ROOT)
    if result.returncode != 0:
        print(f"\n❌ Build failed with code {result.returncode}")
        sys.exit(1)

    output_path = get_output_path()
    size_mb = output_path.stat().st_size / (1024 * 1024) if output_path.exists() else 0.0
    print(f"\n✅ Build successful: {output_path} ({size_mb:.1f} MB)")
    return output_path


def smoke_test(executable: Path) -> None:
    """The frozen CLI must start and report its version."""
    result = subprocess.run([str(executable), "--version"], capture_output=True, text=True)
    if result.returncode != 0 or APP_NAME.lower() not in result.stdout:
        print(f"❌ {executable.name} --version failed:\n{result.stdout}{result.stderr}")
        sys.exit(1)
    print(f"✅ {result.stdout.strip()}")


def main():
    parser = argparse.ArgumentParser(description=f"Build the {APP_NAME} executable")
    parser.add_argument("--clean", action="store_true", help="remove build output and exit")
    parser.add_argument("--no-clean", action="store_true", help="keep previous build output")
    parser.add_argument("--no-smoke-test", action="store_true", help="skip running the built executable")
    args = parser.parse_args()

    if args.clean:
        clean_build_dirs()
        return
    if not args.no_clean:
        clean_build_dirs()

    executable = build_executable()
    if not args.no_smoke_test:
        smoke_test(executable)


if __name__ == "__main__":
    main()
