# Report API: gunicorn -c gunicorn.conf.py wsgi:app
from app import create_app

app = create_app()
app.logger.info("Report API serving store %s", app.config["STORE_PATH"])
