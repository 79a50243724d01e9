import sys
from pathlib import Path

# make tests/ importable for shared helpers (gradcheck oracle)
sys.path.insert(0, str(Path(__file__).parent))
