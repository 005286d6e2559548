#!/usr/bin/env python3
"""
caprelu Setup Script
Installs dependencies, checks for MNIST and runs the test suite
"""

import sys
import subprocess
import os
from pathlib import Path

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")

def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 8):
        print("❌ Error: Python 3.8 or higher required")
        print(f"   Current version: {sys.version}")
        return False
    print(f"✅ Python {sys.version.split()[0]} detected")
    return True

def check_mnist():
    """Check whether CAPRELU_DATA_DIR holds the MNIST IDX files"""
    data_dir = os.environ.get("CAPRELU_DATA_DIR")
    if not data_dir:
        print("⚠️  CAPRELU_DATA_DIR is not set; pass --data-dir to every command")
        return False
    root = Path(data_dir).expanduser()
    missing = [name for name in MNIST_FILES
               if not (root / name).is_file() and not (root / name.replace("-idx", ".idx")).is_file()]
    if missing:
        print(f"❌ Missing in {root}: {', '.join(missing)}")
        return False
    print(f"✅ MNIST found in {root}")
    return True

def install_requirements():
    """Install Python requirements and the package itself"""
    try:
        print("📦 Installing Python dependencies...")
        subprocess.run([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"],
                      check=True)
        subprocess.run([sys.executable, "-m", "pip", "install", "-e", "."], check=True)
        print("✅ Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Failed to install dependencies: {e}")
        return False

def run_tests():
    """Run test suite"""
    try:
        print("🧪 Running tests...")
        result = subprocess.run([sys.executable, "-m", "pytest", "tests/", "-v"],
                               capture_output=True, text=True)
        if result.returncode == 0:
            print("✅ All tests passed")
            return True
        else:
            print("❌ Some tests failed")
            print(result.stdout)
            return False
    except FileNotFoundError:
        print("⚠️  pytest not found, skipping tests")
        return True

def main():
    """Main setup routine"""
    print("🔧 caprelu Setup")
    print("=" * 30)

    if not check_python_version():
        sys.exit(1)

    if not install_requirements():
        sys.exit(1)

    run_tests()
    have_mnist = check_mnist()

    print("\n✅ Setup complete!")
    if have_mnist:
        print("   Try: caprelu experiment cap-sweep --config data/examples/smoke.toml")
    else:
        print("   Download MNIST, then: export CAPRELU_DATA_DIR=/path/to/mnist")

if __name__ == "__main__":
    main()
