from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    # Output
    OUTPUT_DIR: str = "./runs"
    LOG_LEVEL: str = "INFO"

    # Reproducibility
    DETERMINISTIC: bool = True
    NUM_THREADS: int = 0  # 0 keeps torch's default when not deterministic
    DTYPE: Literal["float64", "float32"] = "float64"

    model_config = SettingsConfigDict(
        env_prefix="DHGAT_",
        env_file=".env",
        extra="ignore",
        case_sensitive=True
    )


settings = Settings()
