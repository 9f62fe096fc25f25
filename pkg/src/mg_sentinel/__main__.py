"""Allow running the toolkit directly: python -m mg_sentinel."""

from .cli import main

if __name__ == "__main__":
    main()
