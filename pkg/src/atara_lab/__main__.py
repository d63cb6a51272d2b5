"""Allow ``python -m atara_lab``."""

from .cli import main

raise SystemExit(main())
