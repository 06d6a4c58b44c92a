import sys
from typing import Optional, Sequence

from homwb.app import App
from homwb.cli import router
from homwb.middleware import ManifestMiddleware, TimingMiddleware


def create_app() -> App:
    app = App(middlewares=[TimingMiddleware(), ManifestMiddleware()])
    app.include_commands([router])
    return app


def main(argv: Optional[Sequence[str]] = None) -> int:
    return create_app().run(argv)


if __name__ == "__main__":
    sys.exit(main())
