from django.urls import path
from . import views

urlpatterns = [
    path('v1/health', views.health_check, name='health-check'),
    path('v1/stats', views.run_stats, name='run-stats'),
    path('v1/runs', views.run_list, name='run-list'),
    path('v1/runs/<str:run_id>', views.run_detail, name='run-detail'),
]
