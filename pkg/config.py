import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class Config:
    # Security
    SECRET_KEY = os.getenv("SECRET_KEY", "fallback-key")

    # Export (aggregation daemon)
    MTU = int(os.getenv("MTU", 1500))
    IDLE_FLUSH_SECONDS = float(os.getenv("IDLE_FLUSH_SECONDS", 5.0))
    CHANNEL_CAPACITY = int(os.getenv("CHANNEL_CAPACITY", 4096))
    CHANNEL_MODE = os.getenv("CHANNEL_MODE", "replay")                       # replay | live
    OBSERVATION_DOMAIN_ID = int(os.getenv("OBSERVATION_DOMAIN_ID", 1))
    ENTERPRISE_NUMBER = int(os.getenv("ENTERPRISE_NUMBER", 61440))           # placeholder PEN
    TEMPLATE_RESEND_INTERVAL = int(os.getenv("TEMPLATE_RESEND_INTERVAL", 20))
    ANCILLARY_CAPACITY = int(os.getenv("ANCILLARY_CAPACITY", 3000))

    # Collector
    COLLECTOR_HOST = os.getenv("COLLECTOR_HOST", "127.0.0.1")
    COLLECTOR_PORT = int(os.getenv("COLLECTOR_PORT", 4739))
    COLLECTOR_BIND = os.getenv("COLLECTOR_BIND", "0.0.0.0")
    STORE_PATH = os.getenv("STORE_PATH", "profiles.jsonl")
    PREFIX_V4 = int(os.getenv("PREFIX_V4", 24))
    PREFIX_V6 = int(os.getenv("PREFIX_V6", 48))

    # Logging
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "logs/kpiflow.log")
    LOG_MAX_BYTES = int(os.getenv("LOG_MAX_BYTES", 10 * 1024 * 1024))        # 10MB
    LOG_BACKUP_COUNT = int(os.getenv("LOG_BACKUP_COUNT", 10))

    # Server (report API, used by Gunicorn)
    HOST = os.getenv("HOST", "0.0.0.0")
    PORT = int(os.getenv("PORT", "8000"))

class DevelopmentConfig(Config):
    DEBUG = True
    FLASK_ENV = "development"

class ProductionConfig(Config):
    DEBUG = False
    FLASK_ENV = "production"

class TestingConfig(Config):
    TESTING = True
    DEBUG = False
    LOG_FILE = None
    IDLE_FLUSH_SECONDS = 0.2
