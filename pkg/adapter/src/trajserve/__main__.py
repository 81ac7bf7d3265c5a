"""`python3 -m trajserve` serves the constant-velocity demo predictor."""
from .demo import main

if __name__ == "__main__":
    raise SystemExit(main())
