# gunicorn.conf.py (report API)
import os

from config import Config

# Each request reloads the profile store from STORE_PATH
bind = f"{Config.HOST}:{Config.PORT}"
workers = int(os.getenv("REPORT_WORKERS", 4))
threads = 2
timeout = 60
graceful_timeout = 30
loglevel = str(Config.LOG_LEVEL).lower()

os.makedirs(os.path.dirname(Config.LOG_FILE) or ".", exist_ok=True)
accesslog = os.path.join(os.path.dirname(Config.LOG_FILE) or ".", "gunicorn_access.log")
errorlog = os.path.join(os.path.dirname(Config.LOG_FILE) or ".", "gunicorn_error.log")
