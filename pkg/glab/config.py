from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    output_dir: str = "runs"
    threads: int = 1
    log_level: str = "INFO"
    strict: bool = False  # warnings fail the run

    # Paths simulated per batch when streaming scenario families
    batch_size: int = 4096
    # Largest number of frozen increments the increments-mode cascade accepts
    max_increment_dims: int = 4

    model_config = {"env_prefix": "GLAB_", "env_file": ".env", "extra": "ignore"}


settings = Settings()
