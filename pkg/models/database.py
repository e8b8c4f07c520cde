"""
Database Models and Setup
SQLite run registry: one row per command run plus its metric log
"""

from typing import Dict, Iterable, Optional
import json
import logging

import pandas as pd
from sqlalchemy import (
    Column,
    Float,
    ForeignKey,
    Index,
    Integer,
    String,
    Text,
    UniqueConstraint,
    create_engine,
)
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import declarative_base, sessionmaker

import config

logger = logging.getLogger(__name__)

# Base class for models
Base = declarative_base()


class RunRecord(Base):
    """
    One training / evaluation / inference run
    """
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, nullable=False, unique=True, index=True)
    command = Column(String, nullable=False)
    model = Column(String, nullable=True, index=True)
    profile = Column(String, nullable=True)
    fold = Column(String, nullable=True)          # fold index or 'All'
    seed = Column(Integer, nullable=True)
    status = Column(String, nullable=False, default="started")
    config_json = Column(Text, nullable=True)
    manifest_path = Column(String, nullable=True)
    checkpoint_sha256 = Column(String, nullable=True)
    best_val_mae = Column(Float, nullable=True)
    final_train_mae = Column(Float, nullable=True)
    started_at = Column(String, nullable=True)
    finished_at = Column(String, nullable=True)

    __table_args__ = (
        Index('idx_model_fold', 'model', 'fold'),
    )

    def __repr__(self):
        return f"<RunRecord(run_id={self.run_id}, model={self.model}, fold={self.fold}, status={self.status})>"


class MetricRecord(Base):
    """
    One evaluation point of a run's metric log
    """
    __tablename__ = "metrics"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, ForeignKey("runs.run_id"), nullable=False, index=True)
    step = Column(Integer, nullable=False)
    epoch = Column(Integer, nullable=True)
    lr = Column(Float, nullable=True)
    loss = Column(Float, nullable=True)
    train_mae = Column(Float, nullable=True)
    val_mae = Column(Float, nullable=True)

    # One row per (run, step)
    __table_args__ = (
        Index('idx_run_step', 'run_id', 'step'),
        UniqueConstraint('run_id', 'step', name='uq_run_step'),
    )

    def __repr__(self):
        return f"<MetricRecord(run_id={self.run_id}, step={self.step}, val_mae={self.val_mae})>"


class RunRegistry:
    """
    Records runs and metric logs in SQLite

    The database URL is read from config at construction time, so tests and
    the CLI can point DATABASE_URL elsewhere.
    """

    def __init__(self, database_url: Optional[str] = None):
        """
        Args:
            database_url: SQLAlchemy URL (defaults to config.DATABASE_URL)
        """
        self.database_url = database_url or config.DATABASE_URL
        connect_args = {"check_same_thread": False} if self.database_url.startswith("sqlite") else {}
        self.engine = create_engine(self.database_url, connect_args=connect_args)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self.init_db()

    def init_db(self) -> None:
        """Initialize database by creating all tables"""
        try:
            Base.metadata.create_all(bind=self.engine)
        except Exception as e:
            logger.error(f"Error initializing run registry at {self.database_url}: {e}")
            raise

    # --------------------------------------------------
    # Writes
    # --------------------------------------------------
    def start_run(
        self,
        run_id: str,
        command: str,
        model: Optional[str] = None,
        profile: Optional[str] = None,
        fold: Optional[str] = None,
        seed: Optional[int] = None,
        config_snapshot: Optional[dict] = None,
        manifest_path: Optional[str] = None,
        started_at: Optional[str] = None,
    ) -> None:
        """Inserts a run row; re-registering an existing run id resets its status"""
        db = self.SessionLocal()
        try:
            record = db.query(RunRecord).filter(RunRecord.run_id == run_id).first()
            if record is None:
                record = RunRecord(run_id=run_id, command=command)
                db.add(record)
            record.command = command
            record.model = model
            record.profile = profile
            record.fold = None if fold is None else str(fold)
            record.seed = seed
            record.status = "started"
            record.config_json = json.dumps(config_snapshot, sort_keys=True) if config_snapshot else None
            record.manifest_path = manifest_path
            record.started_at = started_at
            db.commit()
        finally:
            db.close()

    def finish_run(self, run_id: str, status: str, finished_at: Optional[str] = None, **fields) -> None:
        """
        Marks a run finished

        Args:
            run_id: Run to update
            status: 'ok' or 'failed'
            finished_at: Timestamp
            fields: Any of checkpoint_sha256, best_val_mae, final_train_mae
        """
        db = self.SessionLocal()
        try:
            record = db.query(RunRecord).filter(RunRecord.run_id == run_id).first()
            if record is None:
                logger.warning(f"finish_run: unknown run {run_id}")
                return
            record.status = status
            record.finished_at = finished_at
            for name, value in fields.items():
                setattr(record, name, value)
            db.commit()
        finally:
            db.close()

    def log_metrics(self, run_id: str, rows: Iterable[Dict]) -> int:
        """
        Appends metric rows, skipping (run, step) pairs already stored

        Returns:
            Number of rows inserted
        """
        inserted = 0
        db = self.SessionLocal()
        try:
            for row in rows:
                db.add(
                    MetricRecord(
                        run_id=run_id,
                        step=int(row["step"]),
                        epoch=row.get("epoch"),
                        lr=row.get("lr"),
                        loss=row.get("loss"),
                        train_mae=row.get("train_mae"),
                        val_mae=row.get("val_mae"),
                    )
                )
                try:
                    db.commit()
                    inserted += 1
                except IntegrityError:
                    db.rollback()
                    logger.debug(f"Metric row for {run_id} step {row['step']} already stored")
        finally:
            db.close()
        return inserted

    # --------------------------------------------------
    # Reads
    # --------------------------------------------------
    def summary_frame(self) -> pd.DataFrame:
        """Runs as a results table: model, fold, seed, train MAE, validation MAE"""
        db = self.SessionLocal()
        try:
            records = db.query(RunRecord).order_by(RunRecord.id).all()
            frame = pd.DataFrame(
                [
                    {
                        "run_id": r.run_id,
                        "command": r.command,
                        "model": r.model,
                        "profile": r.profile,
                        "fold": r.fold,
                        "seed": r.seed,
                        "status": r.status,
                        "train_mae": r.final_train_mae,
                        "val_mae": r.best_val_mae,
                    }
                    for r in records
                ],
                columns=["run_id", "command", "model", "profile", "fold", "seed", "status", "train_mae", "val_mae"],
            )
        finally:
            db.close()
        for column in ("train_mae", "val_mae"):
            frame[column] = pd.to_numeric(frame[column], errors="coerce")
        return frame

    def metrics_frame(self, run_id: str) -> pd.DataFrame:
        db = self.SessionLocal()
        try:
            rows = (
                db.query(MetricRecord)
                .filter(MetricRecord.run_id == run_id)
                .order_by(MetricRecord.step)
                .all()
            )
            return pd.DataFrame(
                [
                    {
                        "step": r.step,
                        "epoch": r.epoch,
                        "lr": r.lr,
                        "loss": r.loss,
                        "train_mae": r.train_mae,
                        "val_mae": r.val_mae,
                    }
                    for r in rows
                ],
                columns=["step", "epoch", "lr", "loss", "train_mae", "val_mae"],
            )
        finally:
            db.close()

    def cv_summary(self) -> pd.DataFrame:
        """
        Mean / std / count of best validation MAE per model over finished fold runs

        'All' runs carry no validation MAE and drop out here.
        """
        frame = self.summary_frame()
        frame = frame[(frame["command"] == "train") & (frame["status"] == "ok") & frame["val_mae"].notna()]
        if frame.empty:
            return pd.DataFrame(columns=["model", "mean", "std", "count"])
        grouped = frame.groupby("model")["val_mae"].agg(["mean", "std", "count"]).reset_index()
        return grouped
