"""Service configuration: one service, three protocol roles."""

from __future__ import annotations

from dataclasses import dataclass, field


ECHO = "echo"


@dataclass(frozen=True)
class ServiceConfig:
    """Model slots per role plus server settings.

    With ``echo_mode`` (the default) every role is served by deterministic
    seeded stand-ins: no model downloads, byte-stable responses, suitable for
    protocol tests and offline integration runs.
    """

    echo_mode: bool = True
    echo_dim: int = 64
    echo_seed: int = 13
    port: int = 8793
    host: str = "127.0.0.1"
    max_concurrency: int = 8
    # role -> model name; "echo" selects the stand-in even outside echo mode
    embed_models: dict[str, str] = field(
        default_factory=lambda: {"edge": ECHO, "to_segments": ECHO, "to_passages": ECHO}
    )
    rerank_models: dict[str, str] = field(default_factory=lambda: {"edge": ECHO, "node": ECHO})
    chat_model: str = ECHO

    def __post_init__(self) -> None:
        if self.echo_dim < 4:
            raise ValueError("echo_dim must be >= 4")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.echo_mode:
            models = set(self.embed_models.values()) | set(self.rerank_models.values())
            models.add(self.chat_model)
            if models != {ECHO}:
                raise ValueError("echo_mode requires every model slot to be 'echo'")
