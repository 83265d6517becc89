import sys
from pathlib import Path

import torch

# make the sibling oracles module importable from every test file
sys.path.insert(0, str(Path(__file__).parent))

torch.manual_seed(0)
