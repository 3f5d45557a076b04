from flask import Flask, jsonify
from config import DevelopmentConfig, ProductionConfig
from dotenv import load_dotenv
from logging.handlers import RotatingFileHandler
from collector.routes import reports_bp
from pathlib import Path
import logging
import os

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def configure_logging(app):
    level = getattr(logging, str(app.config["LOG_LEVEL"]).upper(), logging.INFO)
    formatter = logging.Formatter(LOG_FORMAT)
    root = logging.getLogger()
    root.setLevel(level)

    # Handlers are installed once per process (create_app may run repeatedly in tests)
    if not any(getattr(h, "_kpiflow", False) for h in root.handlers):
        stream = logging.StreamHandler()
        stream.setFormatter(formatter)
        stream._kpiflow = True
        root.addHandler(stream)

        log_file = app.config.get("LOG_FILE")
        if log_file:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            rotating = RotatingFileHandler(
                log_file,
                maxBytes=app.config["LOG_MAX_BYTES"],
                backupCount=app.config["LOG_BACKUP_COUNT"],
            )
            rotating.setFormatter(formatter)
            rotating._kpiflow = True
            root.addHandler(rotating)

    app.logger.setLevel(level)


def create_app(config_object=None):
    # Load environment variables from .env
    load_dotenv()

    # Initialize Flask app
    app = Flask(__name__)

    # Choose config based on FLASK_ENV
    if config_object is not None:
        app.config.from_object(config_object)
    elif os.getenv("FLASK_ENV") == "production":
        app.config.from_object(ProductionConfig)
    else:
        app.config.from_object(DevelopmentConfig)

    configure_logging(app)

    # Register Blueprints
    app.register_blueprint(reports_bp, url_prefix="/reports")

    # CLI commands (flask --app app <command>, or python -m cli <command>)
    from cli.commands import register_commands
    register_commands(app)

    # Root route
    @app.route("/")
    def home():
        return jsonify({"service": "kpiflow", "reports": "/reports/"})

    return app

# Entry point for direct execution (dev only, Gunicorn serves prod)
if __name__ == "__main__":
    app = create_app()
    app.run(
        host=os.getenv("HOST", "127.0.0.1"),
        port=int(os.getenv("PORT", "8000")),
        debug=os.getenv("FLASK_ENV") != "production"
    )
