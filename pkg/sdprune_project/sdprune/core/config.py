from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = "sdprune"
    debug: bool = False
    threads: int = 1
    hessian_cap: int = 2000
    log_level: str = "INFO"

    model_config = SettingsConfigDict(env_prefix="SDPRUNE_", env_file=".env", extra="ignore")


settings = Settings()
