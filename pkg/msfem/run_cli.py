import sys
from pathlib import Path

# Add the project root to Python path for imports
project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

from msfem.src.experiments.cli import main

if __name__ == "__main__":
    sys.exit(main())
