from datetime import datetime

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class ScreeningRun(Base):
    __tablename__ = 'screening_runs'

    id = Column(Integer, primary_key=True)
    case_name = Column(String, nullable=False, index=True)
    relaxation = Column(String, nullable=False)
    delta = Column(Float, nullable=False, default=0.0)
    cost_cap = Column(Float, nullable=True)
    cost_source = Column(String, nullable=True)
    classification_rule = Column(String, nullable=False, default='optimizer')
    rated_branches = Column(Integer, nullable=False)
    wtb_redundant = Column(Integer, nullable=False)
    wtb_pct = Column(Float, nullable=False)
    wb_redundant = Column(Integer, nullable=True)
    wb_pct = Column(Float, nullable=True)
    undecided = Column(Integer, nullable=False, default=0)
    wall_time = Column(Float, nullable=True)
    report_path = Column(String, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationship with BranchOutcome
    outcomes = relationship(
        "BranchOutcome", back_populates="run", cascade="all, delete-orphan"
    )

    def __repr__(self):
        return (
            f"<ScreeningRun(id={self.id}, case_name='{self.case_name}', "
            f"relaxation='{self.relaxation}', wtb_pct={self.wtb_pct}, wb_pct={self.wb_pct})>"
        )


class BranchOutcome(Base):
    __tablename__ = 'branch_outcomes'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('screening_runs.id'), nullable=False)
    branch_id = Column(Integer, nullable=False)
    label = Column(String, nullable=False)
    wtb_redundant = Column(Boolean, nullable=True)
    wb_redundant = Column(Boolean, nullable=True)

    # Relationship with ScreeningRun
    run = relationship("ScreeningRun", back_populates="outcomes")

    def __repr__(self):
        return f"<BranchOutcome(run_id={self.run_id}, branch_id={self.branch_id}, label='{self.label}')>"
