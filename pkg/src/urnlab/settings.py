import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, Field


class Settings(BaseModel):
    max_support: int = Field(default=100_000, gt=0)
    exact_horizon_cap: int = Field(default=6, ge=0)
    tree_enum_cap: int = Field(default=7, ge=0)
    debug_checks: bool = False
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "Settings":
        env = {
            "max_support": os.environ.get("URNLAB_MAX_SUPPORT"),
            "exact_horizon_cap": os.environ.get("URNLAB_EXACT_HORIZON_CAP"),
            "tree_enum_cap": os.environ.get("URNLAB_TREE_ENUM_CAP"),
            "debug_checks": os.environ.get("URNLAB_DEBUG_CHECKS"),
            "log_level": os.environ.get("URNLAB_LOG_LEVEL"),
        }
        return cls.model_validate({k: v for k, v in env.items() if v is not None})


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    load_dotenv()
    return Settings.from_env()
